#pragma once

#include <optional>
#include <span>
#include <vector>

#include "lietorch/field.hpp"
#include "lietorch/kernels.hpp"
#include "lietorch/se2.hpp"

namespace lietorch {

/// Convection along the left-invariant field c for time T:
/// out(g) = U(g * exp(-T c)), sampled trilinearly.
M2FeatureMap convect(const M2FeatureMap& U, const LieVector& c, double T, Padding pad = Padding::zero);

/// Linear group convolution with the approximate diffusion kernel:
/// out(g) = sum_q K(q) U(g q^-1) dV over the stencil.
M2FeatureMap diffuse(const M2FeatureMap& U, const MetricParams& metric, double t, const StencilRadii& radii,
                     Padding pad = Padding::zero);

/// Same as diffuse for an already sampled stencil.
M2FeatureMap linear_convolve(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad = Padding::zero);

/// Result of a morphological convolution; argmin[v] is the winning stencil
/// offset for voxel v of the flattened (c, k, y, x) layout.
struct MorphResult {
    M2FeatureMap output;
    std::vector<int> argmin;
};

/// out(g) = min_q k(q) + U(g q^-1). Ties keep the first offset in stencil order.
MorphResult erode(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad = Padding::zero);

/// out = -erode(-U, k).
MorphResult dilate(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad = Padding::zero);

/// Pointwise max(0, U).
M2FeatureMap relu_morph(const M2FeatureMap& U);

/// Per-channel PDE coefficients of a CDE layer.
struct ChannelPDE {
    LieVector convection;
    MetricParams dilation;
    MetricParams erosion;
    std::optional<MetricParams> diffusion;
};

/// Affine channel mixing out_i = sum_j a(i, j) in_j + b_i, optionally standardized.
struct AffineParams {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;  ///< row-major rows x cols
    std::vector<double> b;
    std::vector<bool> normalize;  ///< per output channel; empty means none

    static AffineParams identity(int n);
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
    bool normalized(int i) const { return !normalize.empty() && normalize[i]; }
};

struct CDELayerSpec {
    std::vector<ChannelPDE> channels;
    AffineParams affine;
    double alpha = 0.65;
    double T = 1.0;
    StencilRadii radii{2, 2, 1};
    Padding padding = Padding::zero;

    int in_channels() const { return static_cast<int>(channels.size()); }
    int out_channels() const { return affine.rows; }
    void validate() const;

    /// 3 convection + 3 dilation + 3 erosion (+ 3 diffusion) per input channel.
    int pde_parameter_count() const;
    int affine_parameter_count() const { return affine.rows * affine.cols + affine.rows; }
    int parameter_count() const { return pde_parameter_count() + affine_parameter_count(); }
};

inline constexpr double kNormEpsilon = 1e-5;

/// Intermediate results kept for the backward pass.
struct CDEChannelTrace {
    M2FeatureMap convected;
    std::optional<M2FeatureMap> diffused;
    KernelStencil dilation_kernel;
    KernelStencil erosion_kernel;
    MorphResult dilated;
    MorphResult eroded;
};

struct CDETrace {
    std::vector<CDEChannelTrace> channels;
    M2FeatureMap combined;  ///< affine output before standardization
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Convection, optional diffusion, dilation, erosion per channel; then the affine mix.
M2FeatureMap cde_layer_forward(const M2FeatureMap& input, const CDELayerSpec& spec, CDETrace* trace = nullptr);

}  // namespace lietorch
