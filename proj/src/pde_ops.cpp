#include "lietorch/pde_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lietorch/parallel.hpp"
#include "lietorch/sampling.hpp"
#include "lietorch/stencil_taps.hpp"

namespace lietorch {

SliceTaps convection_taps(const M2Grid& grid, const LieVector& c, double T) {
    const SE2 delta = exp_map(c * (-T));
    SliceTaps taps(grid.orientations);
    for (int k = 0; k < grid.orientations; ++k)
        accumulate_taps(taps[k], trilinear_taps(grid, right_action_offset(grid, k, delta)), 1.0);
    return taps;
}

SliceTaps convolution_taps(const M2Grid& grid, const KernelStencil& kernel) {
    if (kernel.orientations != grid.orientations)
        throw std::invalid_argument("kernel stencil and grid disagree on the orientation count");
    SliceTaps taps(grid.orientations);
    for (int k = 0; k < grid.orientations; ++k)
        for (std::size_t n = 0; n < kernel.size(); ++n) {
            const double w = kernel.values[n] * kernel.cell_volume;
            if (w == 0.0) continue;
            accumulate_taps(taps[k], trilinear_taps(grid, right_action_offset(grid, k, inverse(kernel.offsets[n].q))), w);
        }
    return taps;
}

StencilTaps stencil_taps(const M2Grid& grid, const KernelStencil& kernel) {
    if (kernel.orientations != grid.orientations)
        throw std::invalid_argument("kernel stencil and grid disagree on the orientation count");
    StencilTaps taps(grid.orientations);
    for (int k = 0; k < grid.orientations; ++k) {
        taps[k].reserve(kernel.size());
        for (std::size_t n = 0; n < kernel.size(); ++n)
            taps[k].push_back(trilinear_taps(grid, right_action_offset(grid, k, inverse(kernel.offsets[n].q))));
    }
    return taps;
}

int required_margin(const StencilTaps& taps) {
    int m = 0;
    for (const auto& slice : taps) m = std::max(m, required_margin(slice));
    return m;
}

namespace {

M2FeatureMap apply_per_channel(const M2FeatureMap& U, const SliceTaps& taps, Padding pad) {
    M2FeatureMap out(U.grid(), U.channels());
    for (int c = 0; c < U.channels(); ++c) apply_linear(U.channel(c), U.grid(), pad, taps, out.channel(c));
    return out;
}

template <bool Max>
MorphResult morph_core(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad) {
    if (kernel.kind != KernelKind::morphological)
        throw std::invalid_argument("morphological convolution requires a morphological kernel");
    const M2Grid& g = U.grid();
    const StencilTaps taps = stencil_taps(g, kernel);
    const int margin = required_margin(taps);
    MorphResult res{M2FeatureMap(g, U.channels()), std::vector<int>(U.size(), -1)};
    const int W = g.width, H = g.height;
    for (int c = 0; c < U.channels(); ++c) {
        const PaddedChannel src(U.channel(c), g, margin, pad);
        const int stride = src.stride();
        parallel_for(g.orientations, [&](int k) {
            const std::size_t base = U.index(c, k, 0, 0);
            double* best = res.output.data().data() + base;
            int* arg = res.argmin.data() + base;
            std::fill(best, best + g.slice_size(), Max ? -HUGE_VAL : HUGE_VAL);
            std::vector<double> cand(g.slice_size());
            for (std::size_t n = 0; n < kernel.size(); ++n) {
                const double kv = kernel.values[n];
                if (kv >= kSentinel) continue;
                const TapSet& ts = taps[k][n];
                std::fill(cand.begin(), cand.end(), Max ? -kv : kv);
                for (int t = 0; t < ts.count; ++t) {
                    const Tap& tap = ts.taps[t];
                    const double* p = src.origin(tap.k) + tap.dy * stride + tap.dx;
                    for (int y = 0; y < H; ++y) {
                        const double* row = p + static_cast<std::ptrdiff_t>(y) * stride;
                        double* cr = cand.data() + static_cast<std::size_t>(y) * W;
                        for (int x = 0; x < W; ++x) cr[x] += tap.w * row[x];
                    }
                }
                const int ni = static_cast<int>(n);
                for (std::size_t v = 0; v < g.slice_size(); ++v) {
                    if (Max ? cand[v] > best[v] : cand[v] < best[v]) {
                        best[v] = cand[v];
                        arg[v] = ni;
                    }
                }
            }
            for (std::size_t v = 0; v < g.slice_size(); ++v) best[v] = clip_sentinel(best[v]);
        });
    }
    return res;
}

}  // namespace

M2FeatureMap convect(const M2FeatureMap& U, const LieVector& c, double T, Padding pad) {
    return apply_per_channel(U, convection_taps(U.grid(), c, T), pad);
}

M2FeatureMap linear_convolve(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad) {
    return apply_per_channel(U, convolution_taps(U.grid(), kernel), pad);
}

M2FeatureMap diffuse(const M2FeatureMap& U, const MetricParams& metric, double t, const StencilRadii& radii,
                     Padding pad) {
    return linear_convolve(U, sample_diffusion_kernel({metric, t}, U.grid().orientations, radii), pad);
}

MorphResult erode(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad) {
    return morph_core<false>(U, kernel, pad);
}

MorphResult dilate(const M2FeatureMap& U, const KernelStencil& kernel, Padding pad) {
    return morph_core<true>(U, kernel, pad);
}

M2FeatureMap relu_morph(const M2FeatureMap& U) {
    M2FeatureMap out = U;
    for (double& v : out.data()) v = std::max(0.0, v);
    return out;
}

AffineParams AffineParams::identity(int n) {
    AffineParams p;
    p.rows = p.cols = n;
    p.a.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) p.a[static_cast<std::size_t>(i) * n + i] = 1.0;
    p.b.assign(n, 0.0);
    return p;
}

void CDELayerSpec::validate() const {
    if (!(T > 0.0)) throw std::invalid_argument("CDE layer: T must be > 0");
    if (!(alpha >= 0.5 && alpha <= 1.0)) throw std::invalid_argument("CDE layer: alpha must lie in [1/2, 1]");
    if (channels.empty()) throw std::invalid_argument("CDE layer: no input channels");
    if (affine.cols != in_channels()) throw std::invalid_argument("CDE layer: affine columns != input channels");
    if (affine.rows < 1) throw std::invalid_argument("CDE layer: no output channels");
    if (affine.a.size() != static_cast<std::size_t>(affine.rows) * affine.cols)
        throw std::invalid_argument("CDE layer: affine matrix has the wrong size");
    if (affine.b.size() != static_cast<std::size_t>(affine.rows))
        throw std::invalid_argument("CDE layer: affine bias has the wrong size");
    if (!affine.normalize.empty() && affine.normalize.size() != static_cast<std::size_t>(affine.rows))
        throw std::invalid_argument("CDE layer: normalization flags have the wrong size");
}

int CDELayerSpec::pde_parameter_count() const {
    int n = 0;
    for (const auto& ch : channels) n += ch.diffusion ? 12 : 9;
    return n;
}

M2FeatureMap cde_layer_forward(const M2FeatureMap& input, const CDELayerSpec& spec, CDETrace* trace) {
    spec.validate();
    if (input.channels() != spec.in_channels())
        throw std::invalid_argument("CDE layer: input has " + std::to_string(input.channels()) + " channels, spec expects " +
                                    std::to_string(spec.in_channels()));
    const M2Grid& g = input.grid();
    const int K = g.orientations;
    std::vector<M2FeatureMap> evolved;
    evolved.reserve(spec.in_channels());
    if (trace) trace->channels.clear();
    for (int j = 0; j < spec.in_channels(); ++j) {
        const ChannelPDE& ch = spec.channels[j];
        CDEChannelTrace ct;
        ct.convected = convect(input.extract(j), ch.convection, spec.T, spec.padding);
        const M2FeatureMap* cur = &ct.convected;
        if (ch.diffusion) {
            ct.diffused = diffuse(*cur, *ch.diffusion, spec.T, spec.radii, spec.padding);
            cur = &*ct.diffused;
        }
        ct.dilation_kernel = sample_morph_kernel({ch.dilation, spec.T, spec.alpha}, K, spec.radii);
        ct.erosion_kernel = sample_morph_kernel({ch.erosion, spec.T, spec.alpha}, K, spec.radii);
        ct.dilated = dilate(*cur, ct.dilation_kernel, spec.padding);
        ct.eroded = erode(ct.dilated.output, ct.erosion_kernel, spec.padding);
        evolved.push_back(ct.eroded.output);
        if (trace) {
            trace->channels.push_back(std::move(ct));
        }
    }

    const AffineParams& af = spec.affine;
    M2FeatureMap out(g, af.rows);
    for (int i = 0; i < af.rows; ++i) {
        auto dst = out.channel(i);
        std::fill(dst.begin(), dst.end(), af.b[i]);
        for (int j = 0; j < af.cols; ++j) {
            const double a = af.at(i, j);
            if (a == 0.0) continue;
            auto src = evolved[j].channel(0);
            for (std::size_t v = 0; v < dst.size(); ++v) dst[v] += a * src[v];
        }
    }
    if (trace) {
        trace->combined = out;
        trace->mean.assign(af.rows, 0.0);
        trace->stddev.assign(af.rows, 0.0);
    }
    for (int i = 0; i < af.rows; ++i) {
        if (!af.normalized(i)) continue;
        auto ch = out.channel(i);
        double mean = 0.0;
        for (double v : ch) mean += v;
        mean /= static_cast<double>(ch.size());
        double var = 0.0;
        for (double v : ch) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(ch.size()));
        for (double& v : ch) v = (v - mean) / (sd + kNormEpsilon);
        if (trace) {
            trace->mean[i] = mean;
            trace->stddev[i] = sd;
        }
    }
    return out;
}

}  // namespace lietorch
