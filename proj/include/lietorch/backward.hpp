#pragma once

// Reverse-mode gradients of the forward operators. Every function accumulates
// into the gradient buffers it is handed (+=), so callers zero them once.

#include <array>
#include <vector>

#include "lietorch/field.hpp"
#include "lietorch/kernels.hpp"
#include "lietorch/lift.hpp"
#include "lietorch/pde_ops.hpp"
#include "lietorch/se2.hpp"

namespace lietorch {

using Grad3 = std::array<double, 3>;

/// Convection: gin += A^T gout; gc += d<gout, out>/dc (optional).
void convect_backward(const M2FeatureMap& U, const LieVector& c, double T, Padding pad, const M2FeatureMap& gout,
                      M2FeatureMap* gin, Grad3* gc);

/// Diffusion: input gradient and gradient w.r.t. the metric log-weights.
void diffuse_backward(const M2FeatureMap& U, const MetricParams& metric, double t, const StencilRadii& radii,
                      Padding pad, const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric);

/// Linear convolution with a fixed stencil: input gradient only.
void linear_convolve_backward(const KernelStencil& kernel, Padding pad, const M2FeatureMap& gout, M2FeatureMap& gin);

/// Per-offset gradient of a morphological convolution with respect to the
/// kernel values, plus the input gradient routed through the argmin offsets.
/// `sign` is +1 for erosion and -1 for dilation.
std::vector<double> morph_backward(const MorphResult& fwd, const KernelStencil& kernel, Padding pad,
                                   const M2FeatureMap& gout, M2FeatureMap* gin, double sign);

/// Erosion / dilation with a kernel built from `spec`; gmetric receives the
/// gradient w.r.t. the kernel's log-weights.
void erode_backward(const MorphResult& fwd, const MorphKernelSpec& spec, const KernelStencil& kernel, Padding pad,
                    const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric);
void dilate_backward(const MorphResult& fwd, const MorphKernelSpec& spec, const KernelStencil& kernel, Padding pad,
                     const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric);

/// Lifting: gbase (laid out like bank.base()) and optionally the image gradient.
void lift_backward(const Image2D& img, const LiftBank& bank, Padding pad, const M2FeatureMap& gout,
                   std::vector<double>& gbase, Image2D* gimg);

/// Max projection: routes gout to the winning orientation of each pixel.
void project_max_backward(const std::vector<int>& argmax, const Image2D& gout, M2FeatureMap& gin);

struct ChannelPDEGrad {
    Grad3 convection{};
    Grad3 dilation{};
    Grad3 erosion{};
    Grad3 diffusion{};
};

struct CDELayerGrad {
    std::vector<ChannelPDEGrad> channels;
    std::vector<double> a;  ///< row-major, like AffineParams::a
    std::vector<double> b;

    explicit CDELayerGrad(const CDELayerSpec& spec);
    CDELayerGrad() = default;
};

/// Backward pass of cde_layer_forward given its trace; returns the input gradient.
M2FeatureMap cde_layer_backward(const M2FeatureMap& input, const CDELayerSpec& spec, const CDETrace& trace,
                                const M2FeatureMap& gout, CDELayerGrad& grad);

}  // namespace lietorch
