#include <doctest.h>

#include <random>
#include <stdexcept>

#include "lietorch/se2.hpp"

using namespace lietorch;
using doctest::Approx;

namespace {

void check_se2(const SE2& a, const SE2& b, double tol) {
    CHECK(std::abs(a.x - b.x) <= tol);
    CHECK(std::abs(a.y - b.y) <= tol);
    CHECK(std::abs(wrap_angle(a.theta - b.theta)) <= tol);
}

const MetricParams kFig8 = MetricParams::from_weights(1.0, 2.0, 1.0 / kPi);

}  // namespace

TEST_CASE("wrap_angle stays in [-pi, pi)") {
    CHECK(wrap_angle(kPi) == Approx(-kPi));
    CHECK(wrap_angle(-kPi) == Approx(-kPi));
    CHECK(wrap_angle(3 * kPi + 0.5) == Approx(-kPi + 0.5));
    CHECK(wrap_angle(0.25) == 0.25);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-50, 50);
    for (int i = 0; i < 1000; ++i) {
        const double w = wrap_angle(U(rng));
        CHECK(w >= -kPi);
        CHECK(w < kPi);
    }
}

TEST_CASE("compose examples") {
    check_se2(compose({1, 0, 0}, {1, 0, 0}), {2, 0, 0}, 1e-15);
    check_se2(compose({0, 0, kPi / 2}, {1, 0, 0}), {0, 1, kPi / 2}, 1e-15);
    const SE2 g(0.3, -1.2, 2.5);
    check_se2(compose(g, inverse(g)), SE2::identity(), 1e-12);
    check_se2(compose(inverse(g), g), SE2::identity(), 1e-12);
}

TEST_CASE("inverse examples") {
    check_se2(inverse({0, 0, 0}), {0, 0, 0}, 0.0);
    check_se2(inverse({1, 0, 0}), {-1, 0, 0}, 1e-15);
    check_se2(inverse({0, 1, kPi / 2}), {-1, 0, -kPi / 2}, 1e-15);
}

TEST_CASE("compose is associative") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-3, 3);
    for (int i = 0; i < 200; ++i) {
        const SE2 a(U(rng), U(rng), U(rng)), b(U(rng), U(rng), U(rng)), c(U(rng), U(rng), U(rng));
        check_se2(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12);
    }
}

TEST_CASE("log examples") {
    const LieVector a = log_map({2.5, -1.0, 0.0});
    CHECK(a.c1 == 2.5);
    CHECK(a.c2 == -1.0);
    CHECK(a.c3 == 0.0);
    const LieVector z = log_map(SE2::identity());
    CHECK(z.c1 == 0.0);
    CHECK(z.c2 == 0.0);
    CHECK(z.c3 == 0.0);

    const SE2 p(0.0, 1.0, kPi * (1 - 1e-9));
    const LieVector c = log_map(p);
    CHECK(c.c1 == Approx(kPi / 2).epsilon(1e-7));
    CHECK(std::abs(c.c2) < 1e-7);
    CHECK(c.c3 == Approx(kPi).epsilon(1e-8));
    check_se2(exp_map(c), p, 1e-8);
}

TEST_CASE("log at the branch boundary maps to c3 = -pi") {
    const LieVector c = log_map({0.0, 0.0, -kPi});
    CHECK(c.c3 == Approx(-kPi));
}

TEST_CASE("exp examples") {
    check_se2(exp_map({0, 0, 0}), SE2::identity(), 0.0);
    check_se2(exp_map({1.7, 0, 0}), {1.7, 0, 0}, 1e-15);
    const SE2 e = exp_map({kPi / 2, 0, kPi});
    CHECK(e.x == Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(e.x) < 1e-12);
    CHECK(e.y == Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(wrap_angle(e.theta - kPi)) < 1e-12);
}

TEST_CASE("exp(log(g)) = g on 10^4 random samples") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-5, 5), T(-kPi + 1e-6, kPi - 1e-6);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const SE2 g(U(rng), U(rng), T(rng));
        const SE2 h = exp_map(log_map(g));
        worst = std::max({worst, std::abs(h.x - g.x), std::abs(h.y - g.y), std::abs(wrap_angle(h.theta - g.theta))});
    }
    CHECK(worst <= 1e-10);
}

TEST_CASE("log near theta = 0 is smooth") {
    for (double th : {1e-9, 1e-7, 1e-5, 1e-3, 1e-2}) {
        const SE2 g(0.7, -0.4, th);
        const SE2 h = exp_map(log_map(g));
        check_se2(h, g, 1e-12);
    }
}

TEST_CASE("seminorm examples and homogeneity") {
    CHECK(seminorm({0, 0, 0}, kFig8) == 0.0);
    CHECK(seminorm({1, 0, 0}, kFig8) == Approx(1.0));
    CHECK(seminorm({kPi / 2, 0, kPi}, kFig8) == Approx(std::sqrt(kPi * kPi / 4 + kPi)));
    CHECK(seminorm({kPi / 2, 0, kPi}, kFig8) == Approx(2.3682).epsilon(1e-4));
    const LieVector v{0.3, -1.1, 0.8};
    for (double s : {-2.0, -0.5, 0.0, 3.0}) CHECK(seminorm(v * s, kFig8) == Approx(std::abs(s) * seminorm(v, kFig8)));
}

TEST_CASE("rho examples") {
    CHECK(rho(SE2::identity(), kFig8) == 0.0);
    CHECK(rho({1, 0, 0}, kFig8) == Approx(1.0));
    CHECK(rho({0, 1, kPi - 1e-9}, kFig8) == Approx(2.3682).epsilon(1e-4));
    CHECK(rho({0.1, 0, 0}, kFig8) > 0.0);
}

TEST_CASE("rho is inversion symmetric") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-4, 4), T(-3.0, 3.0);
    for (int i = 0; i < 1000; ++i) {
        const SE2 g(U(rng), U(rng), T(rng));
        CHECK(rho(g, kFig8) == Approx(rho(inverse(g), kFig8)).epsilon(1e-12));
    }
}

TEST_CASE("rho_gradient") {
    const auto g = rho_gradient({1, 0, 0}, MetricParams::from_weights(1, 1, 1));
    CHECK(g[0] == Approx(0.5));
    CHECK(g[1] == 0.0);
    CHECK(g[2] == 0.0);
    CHECK_THROWS_AS(rho_gradient(SE2::identity(), kFig8), std::domain_error);

    const LieVector sym{0.8, 0.8, 0.0};
    const auto gs = rho_gradient(exp_map(sym), MetricParams::from_weights(1.5, 1.5, 0.7));
    CHECK(gs[0] == Approx(gs[1]).epsilon(1e-10));

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> U(-3, 3), T(-3.0, 3.0), L(-1, 1);
    const double h = 1e-5;
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const SE2 p(U(rng), U(rng), T(rng));
        MetricParams m = MetricParams::from_log_weights(L(rng), L(rng), L(rng));
        const auto an = rho_gradient(p, m);
        for (int a = 0; a < 3; ++a) {
            MetricParams mp = m, mm = m;
            mp.set_log_weight(a, m.log_weight(a) + h);
            mm.set_log_weight(a, m.log_weight(a) - h);
            const double fd = (rho(p, mp) - rho(p, mm)) / (2 * h);
            // Components below 1e-4 are dominated by difference noise; compare them absolutely.
            worst = std::max(worst, std::abs(fd - an[a]) / std::max({std::abs(fd), std::abs(an[a]), 1e-4}));
        }
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("metric params stay positive in log space") {
    MetricParams m = MetricParams::from_weights(2.0, 0.5, 3.0);
    CHECK(m.wM() == Approx(2.0));
    CHECK(m.log_weight(1) == Approx(std::log(0.5)));
    m.set_log_weight(2, -40.0);
    CHECK(m.wA() > 0.0);
}

TEST_CASE("exp_jacobian matches finite differences") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> U(-2, 2);
    for (int i = 0; i < 50; ++i) {
        const LieVector v{U(rng), U(rng), U(rng)};
        const auto J = exp_jacobian(v);
        const double h = 1e-6;
        for (int c = 0; c < 3; ++c) {
            LieVector vp = v, vm = v;
            (c == 0 ? vp.c1 : c == 1 ? vp.c2 : vp.c3) += h;
            (c == 0 ? vm.c1 : c == 1 ? vm.c2 : vm.c3) -= h;
            const SE2 a = exp_map(vp), b = exp_map(vm);
            CHECK(J[0][c] == Approx((a.x - b.x) / (2 * h)).epsilon(1e-6));
            CHECK(J[1][c] == Approx((a.y - b.y) / (2 * h)).epsilon(1e-6));
            CHECK(J[2][c] == Approx(wrap_angle(a.theta - b.theta) / (2 * h)).epsilon(1e-6));
        }
    }
}
