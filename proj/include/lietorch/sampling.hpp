#pragma once

// Shared machinery for the stencil operators. Every operator in this library
// reads its input at right-translated grid points g * delta. For a fixed
// orientation slice the displacement (in index units) of g * delta relative to
// g does not depend on (x, y), so interpolation taps are precomputed per slice
// and applied over padded copies of the input.

#include <array>
#include <span>
#include <vector>

#include "lietorch/field.hpp"
#include "lietorch/se2.hpp"

namespace lietorch {

struct Tap {
    int dx = 0;
    int dy = 0;
    int k = 0;  ///< absolute source orientation index
    double w = 0.0;
};

/// Up to 8 trilinear taps for one sample location.
struct TapSet {
    std::array<Tap, 8> taps{};
    int count = 0;
};

/// Sample location of (x, y, theta_k) * delta, relative in x/y, absolute in k.
struct SampleOffset {
    double ox = 0.0;
    double oy = 0.0;
    double ok = 0.0;
};

SampleOffset right_action_offset(const M2Grid& grid, int k, const SE2& delta);

/// Trilinear taps; coordinates within 1e-9 of an integer are snapped onto it
/// and zero-weight corners are dropped.
TapSet trilinear_taps(const M2Grid& grid, const SampleOffset& off);

/// Trilinear taps with weight derivatives, zero weights kept.
struct TapGrad {
    Tap tap;
    double dw_dx = 0.0;
    double dw_dy = 0.0;
    double dw_dk = 0.0;
};
std::array<TapGrad, 8> trilinear_tap_grads(const M2Grid& grid, const SampleOffset& off);

/// Merged linear stencil: per output slice, a list of taps with combined weights.
using SliceTaps = std::vector<std::vector<Tap>>;

/// Adds weight * taps into a slice list, merging taps on the same node.
void accumulate_taps(std::vector<Tap>& dst, const TapSet& taps, double weight);

int required_margin(const SliceTaps& taps);
int required_margin(const std::vector<TapSet>& taps);

/// A single channel copied into K padded slices with a spatial margin.
class PaddedChannel {
public:
    PaddedChannel(std::span<const double> src, const M2Grid& grid, int margin, Padding pad);

    const double* origin(int k) const { return data_.data() + slice_offset(k); }
    int stride() const { return stride_; }

private:
    std::size_t slice_offset(int k) const;

    M2Grid grid_;
    int margin_;
    int stride_;
    std::vector<double> data_;
};

/// Adjoint of PaddedChannel: accumulates into padded slices, then folds back.
class PaddedAccumulator {
public:
    PaddedAccumulator(const M2Grid& grid, int margin);

    double* origin(int k) { return data_.data() + slice_offset(k); }
    int stride() const { return stride_; }

    /// dst += fold(this) under the padding policy.
    void fold_into(std::span<double> dst, Padding pad) const;

private:
    std::size_t slice_offset(int k) const;

    M2Grid grid_;
    int margin_;
    int stride_;
    std::vector<double> data_;
};

/// dst = A src for the linear operator described by per-slice taps.
void apply_linear(std::span<const double> src, const M2Grid& grid, Padding pad, const SliceTaps& taps,
                  std::span<double> dst);

/// gsrc += A^T gout.
void apply_linear_adjoint(std::span<const double> gout, const M2Grid& grid, Padding pad,
                          const SliceTaps& taps, std::span<double> gsrc);

}  // namespace lietorch
