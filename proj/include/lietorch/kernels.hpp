#pragma once

#include <array>
#include <vector>

#include "lietorch/field.hpp"
#include "lietorch/se2.hpp"

namespace lietorch {

enum class KernelKind { diffusion, morphological };

/// Stencil half-widths in grid steps. A negative orientation radius means K/2.
struct StencilRadii {
    int rx = 3;
    int ry = 3;
    int rtheta = -1;
};

/// Grid offset (i, j, k) and the group element (i, j, k * dtheta) it represents.
struct StencilOffset {
    int i = 0;
    int j = 0;
    int k = 0;
    SE2 q;
};

/// Offsets |i| <= rx, |j| <= ry, |k| <= rtheta, ordered k-major then j then i.
/// The orientation range is clipped to one period so no group element repeats.
std::vector<StencilOffset> stencil_offsets(int orientations, const StencilRadii& radii);

struct KernelStencil {
    KernelKind kind = KernelKind::morphological;
    int orientations = 0;
    StencilRadii radii;
    std::vector<StencilOffset> offsets;
    std::vector<double> rho;     ///< metric estimate per offset
    std::vector<double> values;  ///< kernel value per offset
    double cell_volume = 0.0;    ///< dx * dy * dtheta

    std::size_t size() const { return offsets.size(); }
    /// Position of the zero offset in the offset list.
    std::size_t center_index() const;
};

struct MorphKernelSpec {
    MetricParams metric;
    double t = 1.0;
    double alpha = 0.65;

    void validate() const;
};

struct DiffusionKernelSpec {
    MetricParams metric;
    double t = 1.0;

    void validate() const;
};

/// (2a - 1) / (2a)^(2a / (2a - 1)) for a in (1/2, 1].
double nu_alpha(double alpha);

/// Morphological kernel as a function of a distance value; clipped to kSentinel.
/// alpha == 1/2 gives the flat kernel (0 inside the ball of radius t).
double morph_kernel_value(double dist, double t, double alpha);

KernelStencil sample_morph_kernel(const MorphKernelSpec& spec, int orientations, const StencilRadii& radii);
KernelStencil sample_diffusion_kernel(const DiffusionKernelSpec& spec, int orientations,
                                      const StencilRadii& radii);

/// Per-offset d value / d(log wM, log wL, log wA). Requires alpha in (1/2, 1].
std::vector<std::array<double, 3>> morph_kernel_gradient(const MorphKernelSpec& spec, int orientations,
                                                          const StencilRadii& radii);

/// Per-offset derivative of the L1-normalized diffusion kernel values.
std::vector<std::array<double, 3>> diffusion_kernel_gradient(const DiffusionKernelSpec& spec, int orientations,
                                                              const StencilRadii& radii);

}  // namespace lietorch
