#pragma once

#include <cstdint>

#include "lietorch/field.hpp"

namespace lietorch {

struct EquivarianceOptions {
    int size = 41;          ///< square image side
    int orientations = 8;   ///< must be divisible by 4
    int layers = 2;
    int channels = 2;
    int max_shift = 3;      ///< translations are drawn from [-max_shift, max_shift]^2
};

struct EquivarianceReport {
    double rotation_deviation = 0.0;     ///< max abs over the whole image, j = 1..3
    double translation_deviation = 0.0;  ///< max abs over the unaffected interior
    double max_deviation = 0.0;
    int interior_margin = 0;             ///< receptive radius of the random pipeline
    int dx = 0, dy = 0;
};

/// Builds a random lift -> CDE layers -> max-projection pipeline from `seed`,
/// feeds it a random image and compares pipeline(g . image) with g . pipeline(image)
/// for the three nontrivial quarter rotations and one integer translation.
EquivarianceReport pipeline_equivariance(std::uint64_t seed, const EquivarianceOptions& opts = {});

}  // namespace lietorch
