#pragma once

#include <functional>

namespace lietorch {

/// Worker count used by the stencil operators. Defaults to 1.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace lietorch
