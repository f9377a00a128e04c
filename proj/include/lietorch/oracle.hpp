#pragma once

// Reference solvers for checking the kernel approximations. Nothing here uses
// the logarithmic metric estimate.

#include <vector>

#include "lietorch/field.hpp"
#include "lietorch/kernels.hpp"
#include "lietorch/se2.hpp"

namespace lietorch::oracle {

/// Grid centered on the identity: spatial nodes (i - n) * h for i in [0, 2n],
/// orientations k * 2 pi / K.
struct OracleGrid {
    int half_width = 12;
    int orientations = 16;
    double h = 1.0;

    int size() const { return 2 * half_width + 1; }
    double dtheta() const { return kTwoPi / orientations; }
    double coord(int i) const { return (i - half_width) * h; }
    std::size_t nodes() const { return static_cast<std::size_t>(size()) * size() * orientations; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * size() + j) * size() + i;
    }
    SE2 element(int i, int j, int k) const { return {coord(i), coord(j), k * dtheta()}; }
    void validate() const;
};

/// Scalar field on an OracleGrid.
struct GridField {
    OracleGrid grid;
    std::vector<double> values;

    double at(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
    /// Trilinear interpolation at a group element; kSentinel outside the spatial domain.
    double interpolate(const SE2& p) const;
};

struct DistanceField : GridField {
    double residual = 0.0;  ///< largest update in the final sweep
    int sweeps = 0;
    bool converged = false;
};

struct EikonalOptions {
    double tolerance = 1e-6;
    int max_sweeps = 4000;
    /// Solve for d / d0 with d0 a smooth frozen-metric norm; removes most of
    /// the first-order error caused by the point source.
    bool factored = true;
};

/// Fast-sweeping upwind solution of the Eikonal equation in the left-invariant
/// frame: (A1 d)^2 / wM + (A2 d)^2 / wL + (A3 d)^2 / wA = 1, d(identity) = 0.
DistanceField eikonal_distance(const MetricParams& metric, const OracleGrid& grid, const EikonalOptions& opts = {});

/// 2 h max(sqrt wM, sqrt wL, sqrt wA * dtheta / h).
double discretization_tolerance(const MetricParams& metric, const OracleGrid& grid);

struct SandwichReport {
    int nodes = 0;        ///< interior window nodes checked (identity excluded)
    int violations = 0;   ///< nodes with rho < d - eps
    double eps_disc = 0.0;
    double min_margin = 0.0;  ///< min over nodes of rho - d
    double max_ratio = 0.0;   ///< max rho / d
    double min_ratio = 0.0;
};

/// Compares rho against the Eikonal distance on max(|x|,|y|) <= window_xy, |theta| <= window_theta.
SandwichReport metric_sandwich(const MetricParams& metric, const DistanceField& dist, double window_xy,
                               double window_theta);

/// Largest explicit Euler step for the frame Laplacian sum_i w_i^-1 A_i^2.
double max_stable_step(const MetricParams& metric, const OracleGrid& grid);

struct HeatKernel : GridField {
    double mass = 0.0;
    double step = 0.0;
    int steps = 0;
};

/// Evolves a normalized delta at the identity to time t with `steps` explicit
/// Euler steps and periodic spatial boundaries. Throws on unstable steps.
HeatKernel fd_heat_kernel(const MetricParams& metric, double t, const OracleGrid& grid, int steps);

struct HeatComparison {
    double relative_l1 = 0.0;
    double mass_error = 0.0;
    double oracle_mass_in_stencil = 0.0;
    int refine = 1;
    int steps = 0;
    KernelStencil stencil;            ///< the sampled approximation
    std::vector<double> oracle;       ///< fd value per stencil offset
};

/// Relative L1 distance sum |fd - K| / sum |fd| over the stencil offsets,
/// where K is sample_diffusion_kernel and fd the oracle sampled on a grid
/// refined by `refine` in every axis.
HeatComparison compare_heat_kernel(const MetricParams& metric, double t, int orientations, const StencilRadii& radii,
                                   int refine = 1, int half_width = 12);

/// Exact min-plus convolution on the finite group (Z_W x Z_H) x| C_K, K in {2, 4}:
/// out(p) = min_g kernel(g^-1 p) + U(g). The kernel field stores the value of
/// offset (i, j, k) at node (i mod W, j mod H, k mod K).
M2FeatureMap brute_morph(const M2FeatureMap& U, const M2FeatureMap& kernel_field);

/// Kernel field for brute_morph from a stencil covering the whole grid.
M2FeatureMap stencil_to_field(const KernelStencil& kernel, const M2Grid& grid);

struct SemigroupReport {
    double residual = 0.0;      ///< max |(k_t box k_s) - k_{t+s}| over the window
    double kernel_range = 0.0;  ///< max - min of k_{t+s} over the window
    int window_nodes = 0;
    double h = 0.0;
};

/// Builds exact-distance kernels from the Eikonal solution and compares their
/// min-plus composition on `grid` with k_{t+s} on the window. The distance is
/// solved on `grid` refined by `eikonal_refine` in every axis, then subsampled.
SemigroupReport semigroup_residual(const MetricParams& metric, double alpha, double t, double s,
                                   const OracleGrid& grid, double window_xy, double window_theta,
                                   int eikonal_refine = 1);

/// Same check on the real line with the lattice h Z: evaluation points are
/// chosen so that the continuous minimizer x s / (t + s) is a lattice node.
SemigroupReport semigroup_residual_1d(double alpha, double t, double s, double h, int half_width);

}  // namespace lietorch::oracle
