#include <doctest.h>

#include <functional>
#include <random>

#include "helpers.hpp"
#include "layer_params.hpp"
#include "lietorch/backward.hpp"

using namespace lietorch;

namespace {

const MetricParams kFig8 = MetricParams::from_weights(1.0, 2.0, 1.0 / kPi);

}  // namespace

using testutil::all_argmins;
using testutil::rel_err;
using testutil::random_spec;
using testutil::smooth_map;
using testutil::SpecParams;

TEST_CASE("adjoint identities of the linear operators") {
    const M2Grid g(9, 8, 8);
    const M2FeatureMap v = testutil::random_map(g, 2, 1);
    const M2FeatureMap w = testutil::random_map(g, 2, 2);
    for (Padding pad : {Padding::zero, Padding::periodic, Padding::replicate}) {
        CAPTURE(static_cast<int>(pad));
        {
            const LieVector c{0.7, -0.4, 0.9};
            M2FeatureMap gin(g, 2);
            convect_backward(v, c, 1.3, pad, w, &gin, nullptr);
            CHECK(std::abs(testutil::dot(convect(v, c, 1.3, pad).data(), w.data()) -
                           testutil::dot(v.data(), gin.data())) < 1e-10);
        }
        {
            M2FeatureMap gin(g, 2);
            diffuse_backward(v, kFig8, 0.8, {2, 2, 2}, pad, w, &gin, nullptr);
            CHECK(std::abs(testutil::dot(diffuse(v, kFig8, 0.8, {2, 2, 2}, pad).data(), w.data()) -
                           testutil::dot(v.data(), gin.data())) < 1e-10);
        }
        {
            const KernelStencil ks = sample_diffusion_kernel({kFig8, 0.5}, 8, {1, 2, 1});
            M2FeatureMap gin(g, 2);
            linear_convolve_backward(ks, pad, w, gin);
            CHECK(std::abs(testutil::dot(linear_convolve(v, ks, pad).data(), w.data()) -
                           testutil::dot(v.data(), gin.data())) < 1e-10);
        }
        {
            LiftBank bank(2, 3, 5, 8);
            std::mt19937_64 rng(3);
            std::normal_distribution<double> N(0.0, 1.0);
            std::vector<double> base(bank.base().size());
            for (double& x : base) x = N(rng);
            bank.set_base(base);
            const Image2D img = testutil::random_image(9, 8, 3, 4);
            std::vector<double> gbase(base.size(), 0.0);
            Image2D gimg(9, 8, 3);
            lift_backward(img, bank, pad, w, gbase, &gimg);
            const double lhs = testutil::dot(lift(img, bank, pad).data(), w.data());
            CHECK(std::abs(lhs - testutil::dot(img.data(), gimg.data())) < 1e-10);
            // Also linear in the kernel weights.
            CHECK(std::abs(lhs - testutil::dot(base, gbase)) < 1e-10);
        }
    }
}

TEST_CASE("project_max backward routes to the winning orientation") {
    const M2Grid g(5, 4, 8);
    const M2FeatureMap m = testutil::random_map(g, 2, 5);
    std::vector<int> arg;
    const Image2D p = project_max(m, &arg);
    const Image2D w = testutil::random_image(5, 4, 2, 6);
    M2FeatureMap gin(g, 2);
    project_max_backward(arg, w, gin);
    // The projection is linear for fixed winners.
    M2FeatureMap masked(g, 2);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 5; ++x) masked(c, arg[(c * 4 + y) * 5 + x], y, x) = m(c, arg[(c * 4 + y) * 5 + x], y, x);
    CHECK(std::abs(testutil::dot(p.data(), w.data()) - testutil::dot(masked.data(), gin.data())) < 1e-12);
    int nonzero = 0;
    for (double v : gin.data()) nonzero += v != 0.0;
    CHECK(nonzero == 2 * 4 * 5);
}

TEST_CASE("convection vector gradient matches finite differences") {
    const M2Grid g(12, 11, 8);
    const M2FeatureMap U = smooth_map(g, 1, 7);
    const M2FeatureMap w = testutil::random_map(g, 1, 8);
    const LieVector c{0.63, -0.41, 0.37};
    Grad3 gc{};
    convect_backward(U, c, 1.0, Padding::zero, w, nullptr, &gc);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i) {
        LieVector cp = c, cm = c;
        (i == 0 ? cp.c1 : i == 1 ? cp.c2 : cp.c3) += h;
        (i == 0 ? cm.c1 : i == 1 ? cm.c2 : cm.c3) -= h;
        const double fd = (testutil::dot(convect(U, cp, 1.0).data(), w.data()) -
                           testutil::dot(convect(U, cm, 1.0).data(), w.data())) / (2 * h);
        CAPTURE(i);
        CHECK(rel_err(gc[i], fd) < 1e-3);
    }
}

TEST_CASE("diffusion metric gradient matches finite differences") {
    const M2Grid g(9, 9, 8);
    const M2FeatureMap U = smooth_map(g, 1, 9);
    const M2FeatureMap w = testutil::random_map(g, 1, 10);
    Grad3 gm{};
    diffuse_backward(U, kFig8, 0.7, {2, 2, 2}, Padding::periodic, w, nullptr, &gm);
    for (int i = 0; i < 3; ++i) {
        auto f = [&](double d) {
            MetricParams m = kFig8;
            m.set_log_weight(i, m.log_weight(i) + d);
            return testutil::dot(diffuse(U, m, 0.7, {2, 2, 2}, Padding::periodic).data(), w.data());
        };
        const double fd = (f(1e-4) - f(-1e-4)) / 2e-4;
        CAPTURE(i);
        CHECK(rel_err(gm[i], fd) < 1e-3);
    }
}

TEST_CASE("morphological backward: stiff kernel passes the gradient through") {
    const M2Grid g(6, 6, 8);
    const M2FeatureMap U = testutil::random_map(g, 1, 11);
    const M2FeatureMap w = testutil::random_map(g, 1, 12);
    const MorphKernelSpec spec{MetricParams::from_weights(1e6, 1e6, 1e6), 1.0, 0.65};
    const KernelStencil ks = sample_morph_kernel(spec, 8, {1, 1, 1});
    for (double sign : {1.0, -1.0}) {
        const MorphResult r = sign > 0 ? erode(U, ks) : dilate(U, ks);
        M2FeatureMap gin(g, 1);
        Grad3 gm{};
        if (sign > 0)
            erode_backward(r, spec, ks, Padding::zero, w, &gin, &gm);
        else
            dilate_backward(r, spec, ks, Padding::zero, w, &gin, &gm);
        CHECK(testutil::max_abs_diff(gin.data(), w.data()) == 0.0);
        for (double v : gm) CHECK(v == 0.0);
    }
}

TEST_CASE("morphological backward: a deep spike collects the gradient of its neighbours") {
    // Quarter-turn orientations keep every rotated offset on the grid.
    const M2Grid g(7, 7, 4);
    M2FeatureMap U(g, 1);
    U(0, 3, 3, 3) = -50.0;
    const MorphKernelSpec spec{kFig8, 1.0, 0.65};
    const KernelStencil ks = sample_morph_kernel(spec, 4, {1, 1, 1});
    const MorphResult r = erode(U, ks, Padding::zero);
    M2FeatureMap ones(g, 1, 1.0);
    M2FeatureMap gin(g, 1);
    morph_backward(r, ks, Padding::zero, ones, &gin, 1.0);
    int winners = 0;
    for (std::size_t v = 0; v < r.output.size(); ++v) winners += r.output.data()[v] < -40.0;
    CHECK(winners > 1);
    CHECK(gin(0, 3, 3, 3) == doctest::Approx(winners));
    double rest = 0.0;
    for (double v : gin.data()) rest += v;
    CHECK(rest == doctest::Approx(static_cast<double>(g.voxels())));
}

TEST_CASE("morphological metric and input gradients match finite differences") {
    const M2Grid g(10, 10, 8);
    const M2FeatureMap U = smooth_map(g, 1, 13);
    const M2FeatureMap w = testutil::random_map(g, 1, 14);
    for (double sign : {1.0, -1.0}) {
        const MorphKernelSpec spec{MetricParams::from_weights(0.8, 1.7, 0.6), 1.0, 0.65};
        auto run = [&](const MorphKernelSpec& s, const M2FeatureMap& in) {
            const KernelStencil k = sample_morph_kernel(s, 8, {2, 2, 2});
            return sign > 0 ? erode(in, k, Padding::periodic) : dilate(in, k, Padding::periodic);
        };
        const KernelStencil ks = sample_morph_kernel(spec, 8, {2, 2, 2});
        const MorphResult base = run(spec, U);
        M2FeatureMap gin(g, 1);
        Grad3 gm{};
        if (sign > 0)
            erode_backward(base, spec, ks, Padding::periodic, w, &gin, &gm);
        else
            dilate_backward(base, spec, ks, Padding::periodic, w, &gin, &gm);

        const double h = 1e-6;
        for (int i = 0; i < 3; ++i) {
            MorphKernelSpec sp = spec, sm = spec;
            sp.metric.set_log_weight(i, spec.metric.log_weight(i) + h);
            sm.metric.set_log_weight(i, spec.metric.log_weight(i) - h);
            const MorphResult rp = run(sp, U), rm = run(sm, U);
            REQUIRE(rp.argmin == base.argmin);
            REQUIRE(rm.argmin == base.argmin);
            const double fd = (testutil::dot(rp.output.data(), w.data()) - testutil::dot(rm.output.data(), w.data())) /
                              (2 * h);
            CHECK(rel_err(gm[i], fd) < 1e-3);
        }
        std::mt19937_64 rng(15);
        int checked = 0;
        for (int trial = 0; trial < 40; ++trial) {
            const std::size_t v = rng() % U.size();
            M2FeatureMap up = U, um = U;
            up.data()[v] += h;
            um.data()[v] -= h;
            const MorphResult rp = run(spec, up), rm = run(spec, um);
            if (rp.argmin != base.argmin || rm.argmin != base.argmin) continue;
            const double fd = (testutil::dot(rp.output.data(), w.data()) - testutil::dot(rm.output.data(), w.data())) /
                              (2 * h);
            CHECK(rel_err(gin.data()[v], fd) < 1e-3);
            ++checked;
        }
        CHECK(checked > 20);
    }
}

TEST_CASE("zero upstream gradient gives zero gradients") {
    const M2Grid g(8, 8, 8);
    const M2FeatureMap U = smooth_map(g, 2, 16);
    CDELayerSpec spec = random_spec(2, 3, true, true, 17);
    CDETrace tr;
    const M2FeatureMap out = cde_layer_forward(U, spec, &tr);
    CDELayerGrad grad(spec);
    const M2FeatureMap gin = cde_layer_backward(U, spec, tr, M2FeatureMap(out.grid(), out.channels()), grad);
    for (double v : gin.data()) CHECK(v == 0.0);
    SpecParams view{spec};
    for (int p = 0; p < view.count(); ++p) CHECK(view.grad(grad, p) == 0.0);
}

TEST_CASE("cde layer gradient matches finite differences") {
    const M2Grid g(10, 10, 8);
    const M2FeatureMap U = smooth_map(g, 2, 18);
    for (bool diffusion : {false, true})
        for (bool normalize : {false, true}) {
            CAPTURE(diffusion);
            CAPTURE(normalize);
            CDELayerSpec spec = random_spec(2, 2, diffusion, normalize, 19 + diffusion + 2 * normalize);
            const M2FeatureMap w = testutil::random_map(g, 2, 20);
            CDETrace tr;
            cde_layer_forward(U, spec, &tr);
            CDELayerGrad grad(spec);
            const M2FeatureMap gin = cde_layer_backward(U, spec, tr, w, grad);
            const std::vector<int> arg0 = all_argmins(tr);

            SpecParams view{spec};
            CHECK(view.count() == spec.parameter_count());
            const double h = 1e-5;
            auto eval = [&](double& f) {
                CDETrace t2;
                f = testutil::dot(cde_layer_forward(U, spec, &t2).data(), w.data());
                return all_argmins(t2) == arg0;
            };
            int checked = 0;
            for (int p = 0; p < view.count(); ++p) {
                const double v0 = view.get(p);
                double fp = 0.0, fm = 0.0;
                view.set(p, v0 + h);
                const bool okp = eval(fp);
                view.set(p, v0 - h);
                const bool okm = eval(fm);
                view.set(p, v0);
                if (!okp || !okm) continue;
                CAPTURE(p);
                CHECK(rel_err(view.grad(grad, p), (fp - fm) / (2 * h), 1e-5) < 1e-3);
                ++checked;
            }
            MESSAGE("checked " << checked << " of " << view.count() << " parameters");
            CHECK(checked >= view.count() - 3);

            // Input gradient on a few voxels.
            std::mt19937_64 rng(21);
            int inputs = 0;
            for (int trial = 0; trial < 20; ++trial) {
                const std::size_t v = rng() % U.size();
                M2FeatureMap up = U, um = U;
                up.data()[v] += h;
                um.data()[v] -= h;
                CDETrace tp, tm;
                const double fp = testutil::dot(cde_layer_forward(up, spec, &tp).data(), w.data());
                const double fm = testutil::dot(cde_layer_forward(um, spec, &tm).data(), w.data());
                if (all_argmins(tp) != arg0 || all_argmins(tm) != arg0) continue;
                CHECK(rel_err(gin.data()[v], (fp - fm) / (2 * h), 1e-5) < 1e-3);
                ++inputs;
            }
            CHECK(inputs > 10);
        }
}
