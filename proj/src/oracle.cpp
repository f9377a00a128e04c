#include "lietorch/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "lietorch/parallel.hpp"
#include "lietorch/sampling.hpp"

namespace lietorch::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

int wrap_index(int i, int n) {
    const int r = i % n;
    return r < 0 ? r + n : r;
}

// Bilinear read inside orientation slice k at fractional index (fi, fj).
// Anything outside the grid or touching an unset node is infinite.
double slice_read(const std::vector<double>& v, const OracleGrid& g, int k, double fi, double fj) {
    fi = snap(fi);
    fj = snap(fj);
    const int N = g.size();
    const double i0 = std::floor(fi), j0 = std::floor(fj);
    const double ax = fi - i0, ay = fj - j0;
    double acc = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int a = 0; a < 2; ++a) {
            const double w = (a ? ax : 1.0 - ax) * (b ? ay : 1.0 - ay);
            if (w == 0.0) continue;
            const int i = static_cast<int>(i0) + a, j = static_cast<int>(j0) + b;
            if (i < 0 || i >= N || j < 0 || j >= N) return kInf;
            const double val = v[g.index(i, j, k)];
            if (val == kInf) return kInf;
            acc += w * val;
        }
    return acc;
}

// Solves sum_i ((D - a_i) / sigma_i)^2 = 1 over the active upwind set.
double godunov(std::array<std::pair<double, double>, 3> as) {
    std::sort(as.begin(), as.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    double A = 0.0, B = 0.0, C = -1.0, D = kInf;
    for (int m = 0; m < 3; ++m) {
        const auto [a, sigma] = as[m];
        if (a == kInf) break;
        const double is2 = 1.0 / (sigma * sigma);
        A += is2;
        B += a * is2;
        C += a * a * is2;
        const double disc = std::max(0.0, B * B - A * C);
        D = (B + std::sqrt(disc)) / A;
        if (m == 2 || D <= as[m + 1].first) break;
    }
    return D;
}

}  // namespace

void OracleGrid::validate() const {
    if (half_width < 1) throw std::invalid_argument("oracle grid: half width must be positive");
    if (orientations < 2) throw std::invalid_argument("oracle grid: at least two orientations are required");
    if (!(h > 0.0)) throw std::invalid_argument("oracle grid: spacing must be positive");
}

double GridField::interpolate(const SE2& p) const {
    const int N = grid.size(), K = grid.orientations;
    const double fi = snap(p.x / grid.h + grid.half_width);
    const double fj = snap(p.y / grid.h + grid.half_width);
    if (fi < 0.0 || fj < 0.0 || fi > N - 1 || fj > N - 1) return kSentinel;
    double fk = snap(wrap_angle(p.theta) / grid.dtheta());
    const double i0 = std::floor(fi), j0 = std::floor(fj), k0 = std::floor(fk);
    const double ax = fi - i0, ay = fj - j0, ak = fk - k0;
    double acc = 0.0;
    for (int c = 0; c < 2; ++c)
        for (int b = 0; b < 2; ++b)
            for (int a = 0; a < 2; ++a) {
                const double w = (a ? ax : 1.0 - ax) * (b ? ay : 1.0 - ay) * (c ? ak : 1.0 - ak);
                if (w == 0.0) continue;
                const int i = std::min(static_cast<int>(i0) + a, N - 1);
                const int j = std::min(static_cast<int>(j0) + b, N - 1);
                const int k = wrap_index(static_cast<int>(k0) + c, K);
                acc += w * values[grid.index(i, j, k)];
            }
    return clip_sentinel(acc);
}

namespace {

// Frozen-metric norm at the identity, periodic in theta; factors the point-source
// cone out of the distance so the sweep differences a smooth quotient.
struct Factor {
    double wM, wL, wA;
    double value(double x, double y, double th) const {
        const double st = 2.0 * std::sin(0.5 * th);
        return std::sqrt(wM * x * x + wL * y * y + wA * st * st);
    }
};

// One factored update: A_i d = tau * g_i + d0 * sigma_i (tau_i - tau) / h_i on
// the axes of `mask`, solved for tau; returns +inf when no upwind-consistent root.
double factored_root(const std::array<double, 3>& alpha, const std::array<double, 3>& beta,
                     const std::array<double, 3>& sigma, const std::array<double, 3>& inv_w, int mask) {
    double A = 0.0, B = 0.0, C = -1.0;
    for (int i = 0; i < 3; ++i) {
        if (!(mask & (1 << i))) continue;
        A += alpha[i] * alpha[i] * inv_w[i];
        B += alpha[i] * beta[i] * inv_w[i];
        C += beta[i] * beta[i] * inv_w[i];
    }
    const double disc = B * B - A * C;
    if (A <= 0.0 || disc < 0.0) return kInf;
    const double tau = (-B + std::sqrt(disc)) / A;
    for (int i = 0; i < 3; ++i) {
        if (!(mask & (1 << i))) continue;
        // The neighbour must lie downhill: sigma_i * A_i d <= 0.
        if (sigma[i] * (alpha[i] * tau + beta[i]) > 1e-12) return kInf;
    }
    return tau;
}

}  // namespace

DistanceField eikonal_distance(const MetricParams& metric, const OracleGrid& grid, const EikonalOptions& opts) {
    grid.validate();
    const int N = grid.size(), K = grid.orientations, n = grid.half_width;
    DistanceField out;
    out.grid = grid;
    auto& v = out.values;
    v.assign(grid.nodes(), kInf);
    const std::size_t origin = grid.index(n, n, 0);
    v[origin] = 0.0;

    const double h = grid.h, dth = grid.dtheta();
    std::vector<double> cs(K), sn(K);
    for (int k = 0; k < K; ++k) {
        cs[k] = std::cos(k * dth);
        sn[k] = std::sin(k * dth);
    }

    std::function<double(int, int, int)> update;
    const Factor f{metric.wM(), metric.wL(), metric.wA()};
    std::vector<double> d0, tau;
    if (!opts.factored) {
        const double s1 = h * std::sqrt(metric.wM()), s2 = h * std::sqrt(metric.wL()), s3 = dth * std::sqrt(metric.wA());
        update = [&, s1, s2, s3](int i, int j, int k) {
            const double c = cs[k], s = sn[k];
            const double a1 = std::min(slice_read(v, grid, k, i + c, j + s), slice_read(v, grid, k, i - c, j - s));
            const double a2 = std::min(slice_read(v, grid, k, i - s, j + c), slice_read(v, grid, k, i + s, j - c));
            const double a3 =
                std::min(v[grid.index(i, j, wrap_index(k + 1, K))], v[grid.index(i, j, wrap_index(k - 1, K))]);
            return godunov({{{a1, s1}, {a2, s2}, {a3, s3}}});
        };
    } else {
        d0.resize(grid.nodes());
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < N; ++j)
                for (int i = 0; i < N; ++i) d0[grid.index(i, j, k)] = f.value(grid.coord(i), grid.coord(j), k * dth);
        tau.assign(grid.nodes(), kInf);
        tau[origin] = 1.0;
        const std::array<double, 3> inv_w = {1.0 / metric.wM(), 1.0 / metric.wL(), 1.0 / metric.wA()};
        const std::array<double, 3> step = {h, h, dth};
        update = [&, inv_w, step](int i, int j, int k) {
            const double c = cs[k], s = sn[k];
            const double x = grid.coord(i), y = grid.coord(j), th = k * dth;
            const double dp = d0[grid.index(i, j, k)];
            const double gx = f.wM * x / dp, gy = f.wL * y / dp, gt = f.wA * std::sin(th) / dp;
            const std::array<double, 3> g = {c * gx + s * gy, -s * gx + c * gy, gt};
            // Neighbour offsets along A1, A2 in index units; A3 moves one slice.
            const std::array<std::array<double, 2>, 2> dir = {{{c, s}, {-s, c}}};
            std::array<double, 3> alpha{}, beta{}, sigma{};
            int active = 0;
            for (int a = 0; a < 3; ++a) {
                double best_d = kInf, best_tau = kInf, best_sigma = 0.0;
                for (int sg : {1, -1}) {
                    double tq, dq;
                    if (a < 2) {
                        const double qi = i + sg * dir[a][0], qj = j + sg * dir[a][1];
                        tq = slice_read(tau, grid, k, qi, qj);
                        dq = tq * f.value(x + sg * h * dir[a][0], y + sg * h * dir[a][1], th);
                    } else {
                        const std::size_t q = grid.index(i, j, wrap_index(k + sg, K));
                        tq = tau[q];
                        dq = tq * d0[q];
                    }
                    if (tq < kInf && dq < best_d) {
                        best_d = dq;
                        best_tau = tq;
                        best_sigma = sg;
                    }
                }
                if (best_tau == kInf) continue;
                active |= 1 << a;
                sigma[a] = best_sigma;
                alpha[a] = g[a] - best_sigma * dp / step[a];
                beta[a] = best_sigma * dp * best_tau / step[a];
            }
            double t_best = kInf;
            for (int mask = 1; mask < 8; ++mask)
                if ((mask & active) == mask) t_best = std::min(t_best, factored_root(alpha, beta, sigma, inv_w, mask));
            return t_best == kInf ? kInf : t_best * dp;
        };
    }

    double last = kInf;
    int sweep = 0;
    while (sweep < opts.max_sweeps) {
        const int dir = sweep % 8;
        const bool fi = dir & 1, fj = dir & 2, fk = dir & 4;
        double change = 0.0;
        for (int kk = 0; kk < K; ++kk) {
            const int k = fk ? K - 1 - kk : kk;
            for (int jj = 0; jj < N; ++jj) {
                const int j = fj ? N - 1 - jj : jj;
                for (int ii = 0; ii < N; ++ii) {
                    const int i = fi ? N - 1 - ii : ii;
                    const std::size_t idx = grid.index(i, j, k);
                    if (idx == origin) continue;
                    const double cand = update(i, j, k);
                    if (cand < v[idx]) {
                        const double delta = v[idx] == kInf ? kInf : v[idx] - cand;
                        change = std::max(change, delta);
                        v[idx] = cand;
                        if (opts.factored) tau[idx] = cand / d0[idx];
                    }
                }
            }
        }
        ++sweep;
        last = change;
        // Every ordering must have run at least once before a quiet sweep counts.
        if (sweep >= 8 && change < opts.tolerance) break;
    }
    out.sweeps = sweep;
    out.residual = last;
    out.converged = last < opts.tolerance;
    for (auto& x : v)
        if (x == kInf) x = kSentinel;
    return out;
}

double discretization_tolerance(const MetricParams& metric, const OracleGrid& grid) {
    return 2.0 * grid.h *
           std::max({std::sqrt(metric.wM()), std::sqrt(metric.wL()), std::sqrt(metric.wA()) * grid.dtheta() / grid.h});
}

SandwichReport metric_sandwich(const MetricParams& metric, const DistanceField& dist, double window_xy,
                               double window_theta) {
    const OracleGrid& g = dist.grid;
    SandwichReport rep;
    rep.eps_disc = discretization_tolerance(metric, g);
    rep.min_margin = kInf;
    rep.min_ratio = kInf;
    for (int k = 0; k < g.orientations; ++k)
        for (int j = 0; j < g.size(); ++j)
            for (int i = 0; i < g.size(); ++i) {
                const SE2 p = g.element(i, j, k);
                if (std::abs(p.x) > window_xy + 1e-12 || std::abs(p.y) > window_xy + 1e-12 ||
                    std::abs(p.theta) > window_theta + 1e-12)
                    continue;
                if (i == g.half_width && j == g.half_width && k == 0) continue;
                const double d = dist.at(i, j, k);
                const double r = rho(p, metric);
                ++rep.nodes;
                if (r < d - rep.eps_disc) ++rep.violations;
                rep.min_margin = std::min(rep.min_margin, r - d);
                rep.max_ratio = std::max(rep.max_ratio, r / d);
                rep.min_ratio = std::min(rep.min_ratio, r / d);
            }
    return rep;
}

double max_stable_step(const MetricParams& metric, const OracleGrid& grid) {
    const double h2 = grid.h * grid.h, t2 = grid.dtheta() * grid.dtheta();
    const double diag = 2.0 * (1.0 / (metric.wM() * h2) + 1.0 / (metric.wL() * h2) + 1.0 / (metric.wA() * t2));
    return 1.0 / diag;
}

HeatKernel fd_heat_kernel(const MetricParams& metric, double t, const OracleGrid& grid, int steps) {
    grid.validate();
    if (!(t > 0.0)) throw std::invalid_argument("heat oracle: t must be positive");
    if (steps < 1) throw std::invalid_argument("heat oracle: at least one step is required");
    const double dt = t / steps;
    const double limit = max_stable_step(metric, grid);
    if (dt > limit * (1.0 + 1e-12))
        throw std::invalid_argument("heat oracle: step " + std::to_string(dt) + " exceeds the stability limit " +
                                    std::to_string(limit));

    const int N = grid.size(), K = grid.orientations;
    const M2Grid mg(N, N, K);
    // A1^2 / wM + A2^2 / wL has no theta derivative, so per slice it is the
    // Cartesian operator div(D grad) with D = R diag(1/wM, 1/wL) R^T. Second
    // differences through interpolated frame reads would add O(1) numerical
    // diffusion, hence the grid-aligned 9-point form with a monotone cross term.
    const double a = 1.0 / metric.wM(), b = 1.0 / metric.wL();
    const double r = dt / (grid.h * grid.h);
    const double cA = dt / (metric.wA() * grid.dtheta() * grid.dtheta());
    SliceTaps step_taps(K);
    for (int k = 0; k < K; ++k) {
        const double c = std::cos(k * grid.dtheta()), s = std::sin(k * grid.dtheta());
        const double dxx = c * c * a + s * s * b, dyy = s * s * a + c * c * b, dxy = c * s * (a - b);
        const double m = std::abs(dxy);
        const int sg = dxy >= 0.0 ? 1 : -1;
        auto& list = step_taps[k];
        auto add = [&](int dx, int dy, int dk, double w) {
            if (w != 0.0) accumulate_taps(list, TapSet{{Tap{dx, dy, wrap_index(k + dk, K), 1.0}}, 1}, w);
        };
        add(0, 0, 0, 1.0 - r * (2.0 * dxx + 2.0 * dyy - 2.0 * m) - 2.0 * cA);
        add(1, 0, 0, r * (dxx - m));
        add(-1, 0, 0, r * (dxx - m));
        add(0, 1, 0, r * (dyy - m));
        add(0, -1, 0, r * (dyy - m));
        add(1, sg, 0, r * m);
        add(-1, -sg, 0, r * m);
        add(0, 0, 1, cA);
        add(0, 0, -1, cA);
    }

    const double dV = grid.h * grid.h * grid.dtheta();
    std::vector<double> u(grid.nodes(), 0.0), next(grid.nodes(), 0.0);
    u[grid.index(grid.half_width, grid.half_width, 0)] = 1.0 / dV;
    for (int s = 0; s < steps; ++s) {
        apply_linear(u, mg, Padding::periodic, step_taps, next);
        u.swap(next);
    }

    HeatKernel out;
    out.grid = grid;
    out.values = std::move(u);
    out.step = dt;
    out.steps = steps;
    out.mass = std::accumulate(out.values.begin(), out.values.end(), 0.0) * dV;
    return out;
}

HeatComparison compare_heat_kernel(const MetricParams& metric, double t, int orientations, const StencilRadii& radii,
                                   int refine, int half_width) {
    if (refine < 1) throw std::invalid_argument("heat comparison: refine must be at least 1");
    const KernelStencil stencil = sample_diffusion_kernel({metric, t}, orientations, radii);
    OracleGrid og{half_width * refine, orientations * refine, 1.0 / refine};
    const int steps = static_cast<int>(std::ceil(t / (0.9 * max_stable_step(metric, og))));
    const HeatKernel fd = fd_heat_kernel(metric, t, og, steps);

    HeatComparison rep;
    rep.refine = refine;
    rep.steps = steps;
    rep.mass_error = std::abs(fd.mass - 1.0);
    double num = 0.0, den = 0.0, mass = 0.0;
    for (std::size_t q = 0; q < stencil.size(); ++q) {
        const auto& off = stencil.offsets[q];
        const int i = og.half_width + off.i * refine, j = og.half_width + off.j * refine;
        const int k = wrap_index(off.k * refine, og.orientations);
        const double f = fd.at(i, j, k);
        rep.oracle.push_back(f);
        num += std::abs(f - stencil.values[q]);
        den += std::abs(f);
        mass += f * stencil.cell_volume;
    }
    rep.relative_l1 = den > 0.0 ? num / den : kInf;
    rep.oracle_mass_in_stencil = mass;
    rep.stencil = stencil;
    return rep;
}

M2FeatureMap brute_morph(const M2FeatureMap& U, const M2FeatureMap& kernel_field) {
    const M2Grid& g = U.grid();
    if (!(kernel_field.grid() == g)) throw std::invalid_argument("brute_morph: kernel field grid mismatch");
    const int K = g.orientations, W = g.width, H = g.height;
    if (K != 2 && K != 4) throw std::invalid_argument("brute_morph: only K = 2 or K = 4 is supported");
    if (K == 4 && W != H) throw std::invalid_argument("brute_morph: K = 4 requires a square grid");
    if (kernel_field.channels() != 1 && kernel_field.channels() != U.channels())
        throw std::invalid_argument("brute_morph: kernel field must have 1 or C channels");

    // Integer rotation by r grid orientation steps.
    auto rotate = [K](int r, int a, int b) -> std::pair<int, int> {
        r = wrap_index(r, K);
        if (K == 2) return r ? std::pair{-a, -b} : std::pair{a, b};
        switch (r) {
            case 1: return {-b, a};
            case 2: return {-a, -b};
            case 3: return {b, -a};
            default: return {a, b};
        }
    };

    M2FeatureMap out(g, U.channels());
    parallel_for(U.channels() * K, [&](int job) {
        const int c = job / K, pk = job % K;
        const int kc = kernel_field.channels() == 1 ? 0 : c;
        for (int py = 0; py < H; ++py)
            for (int px = 0; px < W; ++px) {
                double best = kInf;
                for (int gk = 0; gk < K; ++gk)
                    for (int gy = 0; gy < H; ++gy)
                        for (int gx = 0; gx < W; ++gx) {
                            // g^-1 p = (R(-gk)(p - g), pk - gk)
                            const auto [qx, qy] = rotate(-gk, px - gx, py - gy);
                            const double kv = kernel_field(kc, wrap_index(pk - gk, K), wrap_index(qy, H),
                                                           wrap_index(qx, W));
                            best = std::min(best, kv + U(c, gk, gy, gx));
                        }
                out(c, pk, py, px) = clip_sentinel(best);
            }
    });
    return out;
}

M2FeatureMap stencil_to_field(const KernelStencil& kernel, const M2Grid& grid) {
    if (kernel.orientations != grid.orientations)
        throw std::invalid_argument("stencil_to_field: orientation count mismatch");
    M2FeatureMap f(grid, 1, kSentinel);
    for (std::size_t q = 0; q < kernel.size(); ++q) {
        const auto& o = kernel.offsets[q];
        f(0, wrap_index(o.k, grid.orientations), wrap_index(o.j, grid.height), wrap_index(o.i, grid.width)) =
            kernel.values[q];
    }
    return f;
}

namespace {

DistanceField subsample(const DistanceField& fine, const OracleGrid& coarse, int f) {
    if (f == 1) return fine;
    DistanceField out;
    out.grid = coarse;
    out.residual = fine.residual;
    out.sweeps = fine.sweeps;
    out.converged = fine.converged;
    out.values.resize(coarse.nodes());
    for (int k = 0; k < coarse.orientations; ++k)
        for (int j = 0; j < coarse.size(); ++j)
            for (int i = 0; i < coarse.size(); ++i) out.values[coarse.index(i, j, k)] = fine.at(i * f, j * f, k * f);
    return out;
}

GridField kernel_field(const DistanceField& d, double t, double alpha) {
    GridField f;
    f.grid = d.grid;
    f.values.resize(d.values.size());
    const std::size_t origin = d.grid.index(d.grid.half_width, d.grid.half_width, 0);
    for (std::size_t n = 0; n < d.values.size(); ++n) {
        if (t == 0.0)
            f.values[n] = n == origin ? 0.0 : kSentinel;
        else
            f.values[n] = morph_kernel_value(d.values[n], t, alpha);
    }
    return f;
}

}  // namespace

SemigroupReport semigroup_residual(const MetricParams& metric, double alpha, double t, double s,
                                   const OracleGrid& grid, double window_xy, double window_theta, int eikonal_refine) {
    if (t < 0.0 || s < 0.0 || t + s <= 0.0) throw std::invalid_argument("semigroup: times must be nonnegative");
    if (eikonal_refine < 1) throw std::invalid_argument("semigroup: eikonal refinement must be at least 1");
    const DistanceField dist = subsample(
        eikonal_distance(metric, {grid.half_width * eikonal_refine, grid.orientations * eikonal_refine,
                                  grid.h / eikonal_refine}),
        grid, eikonal_refine);
    const GridField kt = kernel_field(dist, t, alpha);
    const GridField ks = kernel_field(dist, s, alpha);
    const GridField kts = kernel_field(dist, t + s, alpha);

    // Candidates g sorted by k_t(g) so the search stops once k_t alone exceeds the best sum.
    std::vector<std::size_t> order;
    for (std::size_t n = 0; n < kt.values.size(); ++n)
        if (kt.values[n] < kSentinel) order.push_back(n);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return kt.values[a] < kt.values[b]; });
    const int N = grid.size();
    auto element_of = [&](std::size_t n) {
        const int i = static_cast<int>(n % N), j = static_cast<int>((n / N) % N), k = static_cast<int>(n / (N * N));
        return grid.element(i, j, k);
    };

    std::vector<std::size_t> window;
    for (std::size_t n = 0; n < grid.nodes(); ++n) {
        const SE2 p = element_of(n);
        if (std::abs(p.x) <= window_xy + 1e-12 && std::abs(p.y) <= window_xy + 1e-12 &&
            std::abs(p.theta) <= window_theta + 1e-12)
            window.push_back(n);
    }

    std::vector<double> err(window.size(), 0.0), ref(window.size(), 0.0);
    parallel_for(static_cast<int>(window.size()), [&](int w) {
        const std::size_t pn = window[w];
        const SE2 p = element_of(pn);
        double val;
        if (t == 0.0) {
            val = ks.values[pn];
        } else if (s == 0.0) {
            val = kt.values[pn];
        } else {
            val = kInf;
            for (std::size_t gn : order) {
                const double a = kt.values[gn];
                if (a >= val) break;
                val = std::min(val, a + ks.interpolate(compose(inverse(element_of(gn)), p)));
            }
        }
        ref[w] = kts.values[pn];
        err[w] = std::abs(val - ref[w]);
    });

    SemigroupReport rep;
    rep.h = grid.h;
    rep.window_nodes = static_cast<int>(window.size());
    if (!window.empty()) {
        rep.residual = *std::max_element(err.begin(), err.end());
        const auto [lo, hi] = std::minmax_element(ref.begin(), ref.end());
        rep.kernel_range = *hi - *lo;
    }
    return rep;
}

SemigroupReport semigroup_residual_1d(double alpha, double t, double s, double h, int half_width) {
    if (!(t > 0.0) || !(s > 0.0)) throw std::invalid_argument("semigroup: times must be positive");
    if (!(h > 0.0) || half_width < 2) throw std::invalid_argument("semigroup: bad lattice");
    auto k = [alpha](double x, double time) { return morph_kernel_value(std::abs(x), time, alpha); };
    SemigroupReport rep;
    rep.h = h;
    double lo = kInf, hi = -kInf;
    // Minimizers m h stay within half of the lattice.
    for (int m = -half_width / 2; m <= half_width / 2; ++m) {
        const double x = m * h * (t + s) / s;
        double val = kInf;
        for (int n = -half_width; n <= half_width; ++n) {
            const double y = n * h;
            val = std::min(val, k(x - y, t) + k(y, s));
        }
        const double exact = k(x, t + s);
        rep.residual = std::max(rep.residual, std::abs(val - exact));
        lo = std::min(lo, exact);
        hi = std::max(hi, exact);
        ++rep.window_nodes;
    }
    rep.kernel_range = hi - lo;
    return rep;
}

}  // namespace lietorch::oracle
