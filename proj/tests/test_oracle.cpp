#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "lietorch/oracle.hpp"
#include "lietorch/pde_ops.hpp"

using namespace lietorch;
using namespace lietorch::oracle;

namespace {

const MetricParams kFig8 = MetricParams::from_weights(1.0, 2.0, 1.0 / kPi);

const DistanceField& shared_distance() {
    static const DistanceField d = eikonal_distance(kFig8, OracleGrid{12, 16, 1.0});
    return d;
}

}  // namespace

TEST_CASE("eikonal: converges with a zero at the identity") {
    const DistanceField& d = shared_distance();
    const OracleGrid& g = d.grid;
    CHECK(d.converged);
    CHECK(d.residual < 1e-6);
    CHECK(d.at(g.half_width, g.half_width, 0) == 0.0);
    for (double v : d.values) CHECK(v >= 0.0);
}

TEST_CASE("eikonal: unit step along the main axis") {
    const DistanceField& d = shared_distance();
    const OracleGrid& g = d.grid;
    const double v = d.at(g.half_width + 1, g.half_width, 0);
    MESSAGE("d(1,0,0) = " << v);
    CHECK(std::abs(v - 1.0) <= 2.0 * g.h);
    // Lateral steps cost at least sqrt(wL) per unit before any turning.
    CHECK(d.at(g.half_width, g.half_width + 4, 0) > d.at(g.half_width + 4, g.half_width, 0));
}

TEST_CASE("eikonal: symmetric under inversion at grid-exact inverse nodes") {
    const DistanceField& d = shared_distance();
    const OracleGrid& g = d.grid;
    const double eps = discretization_tolerance(kFig8, g);
    const int n = g.half_width, q = g.orientations / 4;
    double worst = 0.0;
    for (int k = 0; k < g.orientations; k += q)
        for (int j = n - 6; j <= n + 6; ++j)
            for (int i = n - 6; i <= n + 6; ++i) {
                const SE2 p = g.element(i, j, k);
                const SE2 pi = inverse(p);
                const int ii = n + static_cast<int>(std::lround(pi.x / g.h));
                const int jj = n + static_cast<int>(std::lround(pi.y / g.h));
                const int kk = ((static_cast<int>(std::lround(pi.theta / g.dtheta())) % g.orientations) +
                                g.orientations) % g.orientations;
                worst = std::max(worst, std::abs(d.at(i, j, k) - d.at(ii, jj, kk)));
            }
    MESSAGE("inversion asymmetry " << worst << " with eps_disc " << eps);
    CHECK(worst <= eps);
}

TEST_CASE("eikonal: iteration cap reports non-convergence") {
    EikonalOptions opts;
    opts.max_sweeps = 1;
    const DistanceField d = eikonal_distance(kFig8, OracleGrid{8, 8, 1.0}, opts);
    CHECK_FALSE(d.converged);
    CHECK(d.residual > 1e-6);
    CHECK(d.sweeps == 1);
}

TEST_CASE("metric estimate dominates the grid distance up to the discretisation tolerance") {
    const DistanceField& d = shared_distance();
    const SandwichReport r = metric_sandwich(kFig8, d, 8.0, 3.0 * kPi / 4.0);
    MESSAGE("nodes " << r.nodes << " max ratio " << r.max_ratio << " min ratio " << r.min_ratio);
    CHECK(r.nodes > 0);
    CHECK(r.violations == 0);
    CHECK(r.eps_disc == doctest::Approx(discretization_tolerance(kFig8, d.grid)));
    CHECK(std::isfinite(r.max_ratio));
    CHECK(r.max_ratio >= 1.0);
}

TEST_CASE("approximate morphological kernel dominates the exact-distance kernel") {
    const DistanceField& d = shared_distance();
    const OracleGrid& g = d.grid;
    const double eps = discretization_tolerance(kFig8, g);
    for (double alpha : {0.65, 1.0}) {
        const KernelStencil ks = sample_morph_kernel({kFig8, 1.0, alpha}, g.orientations, {4, 4, 4});
        int checked = 0;
        for (std::size_t q = 0; q < ks.size(); ++q) {
            const auto& o = ks.offsets[q];
            const int k = ((o.k % g.orientations) + g.orientations) % g.orientations;
            const double exact = morph_kernel_value(std::max(d.at(g.half_width + o.i, g.half_width + o.j, k) - eps, 0.0),
                                                    1.0, alpha);
            CHECK(ks.values[q] >= exact - 1e-12);
            ++checked;
        }
        CHECK(checked == static_cast<int>(ks.size()));
    }
}

TEST_CASE("heat oracle: mass, positivity and symmetry") {
    const MetricParams iso = MetricParams::from_weights(1.0, 1.0, 1.0 / kPi);
    const OracleGrid g{8, 16, 1.0};
    // At the stability limit the center weight vanishes and a delta alternates parity.
    const int steps = static_cast<int>(std::ceil(1.0 / (0.5 * max_stable_step(iso, g))));
    const HeatKernel hk = fd_heat_kernel(iso, 1.0, g, steps);
    const double dV = g.h * g.h * g.dtheta();
    double mass = 0.0;
    for (double v : hk.values) {
        CHECK(v >= -1e-15);
        mass += v * dV;
    }
    CHECK(std::abs(mass - 1.0) < 1e-8);
    CHECK(std::abs(hk.mass - 1.0) < 1e-8);
    const int n = g.half_width;
    for (int j = 0; j < g.size(); ++j)
        for (int i = 0; i < g.size(); ++i)
            CHECK(hk.at(i, j, 0) == doctest::Approx(hk.at(j, i, 0)).epsilon(1e-10));
    CHECK(hk.at(n, n, 0) > hk.at(n + 1, n, 0));
}

TEST_CASE("heat oracle: nonincreasing along the three frame axes") {
    const OracleGrid g{8, 16, 1.0};
    const HeatKernel hk = fd_heat_kernel(kFig8, 1.0, g, static_cast<int>(std::ceil(1.0 / (0.5 * max_stable_step(kFig8, g)))));
    const int n = g.half_width;
    for (int s = 0; s < n; ++s) {
        CHECK(hk.at(n + s, n, 0) >= hk.at(n + s + 1, n, 0));
        CHECK(hk.at(n - s, n, 0) >= hk.at(n - s - 1, n, 0));
        CHECK(hk.at(n, n + s, 0) >= hk.at(n, n + s + 1, 0));
        CHECK(hk.at(n, n - s, 0) >= hk.at(n, n - s - 1, 0));
    }
    for (int k = 0; k < g.orientations / 2; ++k) {
        CHECK(hk.at(n, n, k) >= hk.at(n, n, k + 1));
        CHECK(hk.at(n, n, (g.orientations - k) % g.orientations) >= hk.at(n, n, g.orientations - k - 1));
    }
}

TEST_CASE("heat oracle: rejects unstable steps") {
    const OracleGrid g{6, 16, 1.0};
    const double dt = max_stable_step(kFig8, g);
    const int too_few = static_cast<int>(std::floor(1.0 / (1.5 * dt)));
    CHECK_THROWS_AS(fd_heat_kernel(kFig8, 1.0, g, std::max(too_few, 1)), std::invalid_argument);
}

TEST_CASE("heat comparison reports conserved masses") {
    const HeatComparison c = compare_heat_kernel(kFig8, 1.0, 16, {3, 3, 8}, 1, 10);
    MESSAGE("relative L1 " << c.relative_l1);
    CHECK(c.mass_error < 1e-8);
    CHECK(c.relative_l1 >= 0.0);
    CHECK(c.oracle.size() == c.stencil.size());
    CHECK(c.oracle_mass_in_stencil > 0.5);
    CHECK(c.oracle_mass_in_stencil <= 1.0 + 1e-8);
}

TEST_CASE("brute_morph: spike reproduces the kernel") {
    const M2Grid g(7, 7, 4);
    const M2FeatureMap kf = stencil_to_field(sample_morph_kernel({kFig8, 1.0, 0.65}, 4, {3, 3, 2}), g);
    M2FeatureMap spike(g, 1, kSentinel);
    spike(0, 0, 0, 0) = 0.0;
    const M2FeatureMap out = brute_morph(spike, kf);
    CHECK(testutil::max_abs_diff(out.data(), kf.data()) == 0.0);
}

TEST_CASE("brute_morph: matches erode when the stencil covers the whole grid") {
    for (int K : {2, 4}) {
        const M2Grid g(7, 7, K);
        const KernelStencil ks = sample_morph_kernel({kFig8, 1.0, 0.65}, K, {3, 3, K / 2});
        const M2FeatureMap U = testutil::random_map(g, 2, 20 + K);
        const M2FeatureMap a = brute_morph(U, stencil_to_field(ks, g));
        const M2FeatureMap b = erode(U, ks, Padding::periodic).output;
        CHECK(testutil::max_abs_diff(a.data(), b.data()) < 1e-12);
    }
}

TEST_CASE("brute_morph: min-plus associativity on tiny grids") {
    for (int K : {2, 4}) {
        const M2Grid g(8, 8, K);
        const M2FeatureMap U = testutil::random_map(g, 1, 30 + K);
        const M2FeatureMap k1 = testutil::random_map(g, 1, 40 + K, 0.0, 2.0);
        const M2FeatureMap k2 = testutil::random_map(g, 1, 50 + K, 0.0, 2.0);
        const M2FeatureMap lhs = brute_morph(brute_morph(U, k1), k2);
        const M2FeatureMap rhs = brute_morph(U, brute_morph(k1, k2));
        CHECK(testutil::max_abs_diff(lhs.data(), rhs.data()) < 1e-12);
    }
}

TEST_CASE("brute_morph: validation") {
    CHECK_THROWS(brute_morph(M2FeatureMap(M2Grid(4, 4, 8), 1), M2FeatureMap(M2Grid(4, 4, 8), 1)));
    CHECK_THROWS(brute_morph(M2FeatureMap(M2Grid(4, 5, 4), 1), M2FeatureMap(M2Grid(4, 5, 4), 1)));
    CHECK_THROWS(brute_morph(M2FeatureMap(M2Grid(4, 4, 4), 1), M2FeatureMap(M2Grid(5, 4, 4), 1)));
}

TEST_CASE("semigroup: one-dimensional case is exact") {
    const SemigroupReport r = semigroup_residual_1d(1.0, 1.0, 1.0, 0.5, 20);
    CHECK(r.residual < 1e-12);
    CHECK(r.kernel_range > 0.0);
    const SemigroupReport r2 = semigroup_residual_1d(0.65, 1.0, 2.0, 0.25, 30);
    MESSAGE("alpha 0.65 1D residual " << r2.residual << " of range " << r2.kernel_range);
    CHECK(r2.residual <= 1e-9 * std::max(1.0, r2.kernel_range));
}

TEST_CASE("semigroup: zero time is the identity element") {
    const OracleGrid g{5, 16, 1.0};
    const SemigroupReport r = semigroup_residual(kFig8, 1.0, 0.0, 1.0, g, 3.0, kPi / 2.0);
    CHECK(r.residual == 0.0);
    CHECK(r.window_nodes > 0);
    const SemigroupReport r2 = semigroup_residual(kFig8, 0.65, 1.0, 0.0, g, 3.0, kPi / 2.0);
    CHECK(r2.residual == 0.0);
}
