#pragma once

// Tap tables shared by the forward operators and their adjoints.

#include <vector>

#include "lietorch/kernels.hpp"
#include "lietorch/sampling.hpp"

namespace lietorch {

/// taps[k][n]: sample taps of offset n for output orientation slice k.
using StencilTaps = std::vector<std::vector<TapSet>>;

/// Taps reading U(g * exp(-T c)).
SliceTaps convection_taps(const M2Grid& grid, const LieVector& c, double T);

/// Merged taps of sum_q K(q) U(g q^-1) dV.
SliceTaps convolution_taps(const M2Grid& grid, const KernelStencil& kernel);

/// Unmerged taps reading U(g q^-1) for every stencil offset q.
StencilTaps stencil_taps(const M2Grid& grid, const KernelStencil& kernel);

int required_margin(const StencilTaps& taps);

}  // namespace lietorch
