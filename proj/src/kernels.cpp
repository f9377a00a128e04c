#include "lietorch/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lietorch {

std::vector<StencilOffset> stencil_offsets(int orientations, const StencilRadii& radii) {
    if (radii.rx < 0 || radii.ry < 0) throw std::invalid_argument("stencil radii must be non-negative");
    const int rt = radii.rtheta < 0 ? orientations / 2 : radii.rtheta;
    int k_lo = -rt, k_hi = rt;
    if (2 * rt + 1 > orientations) {
        k_lo = -(orientations / 2);
        k_hi = orientations - 1 + k_lo;
    }
    const double dtheta = kTwoPi / orientations;
    std::vector<StencilOffset> out;
    out.reserve(static_cast<std::size_t>(k_hi - k_lo + 1) * (2 * radii.ry + 1) * (2 * radii.rx + 1));
    for (int k = k_lo; k <= k_hi; ++k)
        for (int j = -radii.ry; j <= radii.ry; ++j)
            for (int i = -radii.rx; i <= radii.rx; ++i)
                out.push_back({i, j, k, SE2(i, j, k * dtheta)});
    return out;
}

std::size_t KernelStencil::center_index() const {
    for (std::size_t n = 0; n < offsets.size(); ++n)
        if (offsets[n].i == 0 && offsets[n].j == 0 && offsets[n].k == 0) return n;
    throw std::logic_error("stencil has no zero offset");
}

void MorphKernelSpec::validate() const {
    if (!(t > 0.0)) throw std::invalid_argument("morphological kernel: t must be > 0");
    if (!(alpha >= 0.5 && alpha <= 1.0)) throw std::invalid_argument("morphological kernel: alpha must lie in [1/2, 1]");
}

void DiffusionKernelSpec::validate() const {
    if (!(t > 0.0)) throw std::invalid_argument("diffusion kernel: t must be > 0");
}

double nu_alpha(double alpha) {
    if (!(alpha > 0.5 && alpha <= 1.0)) throw std::invalid_argument("nu_alpha: alpha must lie in (1/2, 1]");
    const double e = 2.0 * alpha / (2.0 * alpha - 1.0);
    return (2.0 * alpha - 1.0) / std::pow(2.0 * alpha, e);
}

double morph_kernel_value(double dist, double t, double alpha) {
    if (alpha == 0.5) return dist <= t ? 0.0 : kSentinel;
    const double e = 2.0 * alpha / (2.0 * alpha - 1.0);
    const double v = nu_alpha(alpha) * std::pow(t, -1.0 / (2.0 * alpha - 1.0)) * std::pow(dist, e);
    return std::isfinite(v) ? std::min(v, kSentinel) : kSentinel;
}

namespace {

KernelStencil make_stencil(KernelKind kind, const MetricParams& metric, int orientations,
                           const StencilRadii& radii) {
    KernelStencil s;
    s.kind = kind;
    s.orientations = orientations;
    s.radii = radii;
    s.offsets = stencil_offsets(orientations, radii);
    s.cell_volume = kTwoPi / orientations;
    s.rho.reserve(s.offsets.size());
    for (const auto& o : s.offsets) s.rho.push_back(rho(o.q, metric));
    return s;
}

}  // namespace

KernelStencil sample_morph_kernel(const MorphKernelSpec& spec, int orientations, const StencilRadii& radii) {
    spec.validate();
    KernelStencil s = make_stencil(KernelKind::morphological, spec.metric, orientations, radii);
    s.values.reserve(s.size());
    for (double r : s.rho) s.values.push_back(morph_kernel_value(r, spec.t, spec.alpha));
    s.values[s.center_index()] = 0.0;
    return s;
}

KernelStencil sample_diffusion_kernel(const DiffusionKernelSpec& spec, int orientations,
                                      const StencilRadii& radii) {
    spec.validate();
    KernelStencil s = make_stencil(KernelKind::diffusion, spec.metric, orientations, radii);
    double total = 0.0;
    s.values.reserve(s.size());
    for (double r : s.rho) {
        s.values.push_back(std::exp(-r * r / (4.0 * spec.t)));
        total += s.values.back();
    }
    const double scale = 1.0 / (total * s.cell_volume);
    for (double& v : s.values) v *= scale;
    return s;
}

std::vector<std::array<double, 3>> morph_kernel_gradient(const MorphKernelSpec& spec, int orientations,
                                                          const StencilRadii& radii) {
    spec.validate();
    if (spec.alpha == 0.5) throw std::invalid_argument("morph_kernel_gradient: flat kernel has no gradient");
    const auto offsets = stencil_offsets(orientations, radii);
    const double p = 2.0 * spec.alpha / (2.0 * spec.alpha - 1.0);
    const double scale = nu_alpha(spec.alpha) * std::pow(spec.t, -1.0 / (2.0 * spec.alpha - 1.0));
    const auto w = spec.metric.weights();
    std::vector<std::array<double, 3>> out;
    out.reserve(offsets.size());
    for (const auto& o : offsets) {
        const LieVector c = log_map(o.q);
        const double r = seminorm(c, spec.metric);
        const double value = scale * std::pow(r, p);
        if (r == 0.0 || !(value < kSentinel)) {
            out.push_back({0.0, 0.0, 0.0});
            continue;
        }
        // d/dlog w_i of rho^p = (p/2) rho^(p-2) w_i c_i^2
        const double f = scale * 0.5 * p * std::pow(r, p - 2.0);
        out.push_back({f * w[0] * c.c1 * c.c1, f * w[1] * c.c2 * c.c2, f * w[2] * c.c3 * c.c3});
    }
    return out;
}

std::vector<std::array<double, 3>> diffusion_kernel_gradient(const DiffusionKernelSpec& spec, int orientations,
                                                              const StencilRadii& radii) {
    const KernelStencil s = sample_diffusion_kernel(spec, orientations, radii);
    const auto w = spec.metric.weights();
    std::vector<std::array<double, 3>> g(s.size());
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    for (std::size_t n = 0; n < s.size(); ++n) {
        const LieVector c = log_map(s.offsets[n].q);
        g[n] = {-w[0] * c.c1 * c.c1 / (4.0 * spec.t), -w[1] * c.c2 * c.c2 / (4.0 * spec.t),
                -w[2] * c.c3 * c.c3 / (4.0 * spec.t)};
        for (int a = 0; a < 3; ++a) mean[a] += s.values[n] * s.cell_volume * g[n][a];
    }
    for (std::size_t n = 0; n < s.size(); ++n)
        for (int a = 0; a < 3; ++a) g[n][a] = s.values[n] * (g[n][a] - mean[a]);
    return g;
}

}  // namespace lietorch
