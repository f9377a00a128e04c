#include "lietorch/equivariance.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lietorch/lift.hpp"
#include "lietorch/pde_ops.hpp"

namespace lietorch {

namespace {

struct Pipeline {
    LiftBank bank;
    std::vector<CDELayerSpec> layers;

    Image2D operator()(const Image2D& img) const {
        M2FeatureMap u = lift(img, bank, Padding::zero);
        for (const auto& spec : layers) u = cde_layer_forward(u, spec);
        return project_max(u);
    }
};

int ceil_int(double v) { return static_cast<int>(std::ceil(v - 1e-12)); }

}  // namespace

EquivarianceReport pipeline_equivariance(std::uint64_t seed, const EquivarianceOptions& opts) {
    if (opts.size < 3 || opts.orientations % 4 != 0 || opts.layers < 1 || opts.channels < 1 || opts.max_shift < 0)
        throw std::invalid_argument("equivariance: invalid options");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    std::uniform_real_distribution<double> U(-1.0, 1.0);

    Pipeline p;
    const int m = 5;
    p.bank = LiftBank(opts.channels, 1, m, opts.orientations);
    std::vector<double> base(p.bank.base().size());
    for (double& v : base) v = N(rng);
    p.bank.set_base(base);

    // Receptive radius: half the lifting kernel, then per layer the convection
    // shift and two morphological stencil reaches, each rounded up to whole cells.
    int radius = m / 2;
    for (int l = 0; l < opts.layers; ++l) {
        CDELayerSpec spec;
        spec.alpha = 0.65;
        spec.T = 1.0;
        spec.radii = {1, 1, 1};
        spec.padding = Padding::zero;
        double shift = 0.0;
        for (int c = 0; c < opts.channels; ++c) {
            ChannelPDE ch;
            ch.convection = {0.8 * U(rng), 0.8 * U(rng), 0.8 * U(rng)};
            ch.dilation = MetricParams::from_log_weights(0.3 * N(rng), 0.3 * N(rng), 0.3 * N(rng));
            ch.erosion = MetricParams::from_log_weights(0.3 * N(rng), 0.3 * N(rng), 0.3 * N(rng));
            shift = std::max(shift, std::hypot(ch.convection.c1, ch.convection.c2));
            spec.channels.push_back(ch);
        }
        spec.affine.rows = spec.affine.cols = opts.channels;
        for (int i = 0; i < opts.channels * opts.channels; ++i) spec.affine.a.push_back(N(rng) / std::sqrt(opts.channels));
        for (int i = 0; i < opts.channels; ++i) spec.affine.b.push_back(0.1 * N(rng));
        const int reach = ceil_int(std::hypot(spec.radii.rx, spec.radii.ry));
        radius += ceil_int(spec.T * shift) + 2 * reach;
        p.layers.push_back(std::move(spec));
    }

    Image2D img(opts.size, opts.size, 1);
    for (double& v : img.data()) v = N(rng);
    const Image2D out = p(img);

    EquivarianceReport r;
    r.interior_margin = radius;
    for (int j = 1; j < 4; ++j) {
        const Image2D a = p(rotate_quarter(img, j));
        const Image2D b = rotate_quarter(out, j);
        for (std::size_t i = 0; i < a.data().size(); ++i)
            r.rotation_deviation = std::max(r.rotation_deviation, std::abs(a.data()[i] - b.data()[i]));
    }

    std::uniform_int_distribution<int> S(-opts.max_shift, opts.max_shift);
    r.dx = S(rng);
    r.dy = S(rng);
    const Image2D a = p(translate_int(img, r.dx, r.dy));
    const Image2D b = translate_int(out, r.dx, r.dy);
    // Voxels whose receptive field stays inside the image before and after the shift.
    const int x0 = radius + std::max(r.dx, 0), x1 = opts.size - 1 - radius + std::min(r.dx, 0);
    const int y0 = radius + std::max(r.dy, 0), y1 = opts.size - 1 - radius + std::min(r.dy, 0);
    if (x0 > x1 || y0 > y1) throw std::invalid_argument("equivariance: image too small for the pipeline's receptive field");
    for (int c = 0; c < a.channels(); ++c)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                r.translation_deviation = std::max(r.translation_deviation, std::abs(a(c, y, x) - b(c, y, x)));
    r.max_deviation = std::max(r.rotation_deviation, r.translation_deviation);
    return r;
}

}  // namespace lietorch
