#include "lietorch/backward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "lietorch/parallel.hpp"
#include "lietorch/sampling.hpp"
#include "lietorch/stencil_taps.hpp"

namespace lietorch {

namespace {

void check_same_grid(const M2FeatureMap& a, const M2FeatureMap& b, const char* what) {
    if (!(a.grid() == b.grid()) || a.channels() != b.channels())
        throw std::invalid_argument(std::string(what) + ": gradient shape does not match the forward shape");
}

// sum_{y,x} g(y, x) * src(y + dy, x + dx) over one slice.
double slice_dot(const double* g, const double* src, int stride, int W, int H) {
    double acc = 0.0;
    for (int y = 0; y < H; ++y) {
        const double* row = src + static_cast<std::ptrdiff_t>(y) * stride;
        const double* gr = g + static_cast<std::size_t>(y) * W;
        for (int x = 0; x < W; ++x) acc += gr[x] * row[x];
    }
    return acc;
}

}  // namespace

void convect_backward(const M2FeatureMap& U, const LieVector& c, double T, Padding pad, const M2FeatureMap& gout,
                      M2FeatureMap* gin, Grad3* gc) {
    check_same_grid(U, gout, "convect_backward");
    const M2Grid& g = U.grid();
    if (gin) {
        check_same_grid(U, *gin, "convect_backward");
        const SliceTaps taps = convection_taps(g, c, T);
        for (int ch = 0; ch < U.channels(); ++ch) apply_linear_adjoint(gout.channel(ch), g, pad, taps, gin->channel(ch));
    }
    if (!gc) return;

    const LieVector mc = c * (-T);
    const SE2 delta = exp_map(mc);
    const int K = g.orientations;
    std::vector<std::array<TapGrad, 8>> tg(K);
    int margin = 0;
    for (int k = 0; k < K; ++k) {
        tg[k] = trilinear_tap_grads(g, right_action_offset(g, k, delta));
        for (const auto& t : tg[k]) margin = std::max({margin, std::abs(t.tap.dx), std::abs(t.tap.dy)});
    }

    // Gradient w.r.t. the sample offset (ox, oy, ok) of every slice.
    std::vector<Grad3> goff(K, Grad3{});
    for (int ch = 0; ch < U.channels(); ++ch) {
        const PaddedChannel src(U.channel(ch), g, margin, pad);
        parallel_for(K, [&](int k) {
            const double* go = gout.data().data() + gout.index(ch, k, 0, 0);
            for (const auto& t : tg[k]) {
                const double s = slice_dot(go, src.origin(t.tap.k) + t.tap.dy * src.stride() + t.tap.dx, src.stride(),
                                           g.width, g.height);
                goff[k][0] += s * t.dw_dx;
                goff[k][1] += s * t.dw_dy;
                goff[k][2] += s * t.dw_dk;
            }
        });
    }

    Grad3 gdelta{};
    for (int k = 0; k < K; ++k) {
        const double cs = std::cos(g.theta(k)), sn = std::sin(g.theta(k));
        gdelta[0] += cs * goff[k][0] + sn * goff[k][1];
        gdelta[1] += -sn * goff[k][0] + cs * goff[k][1];
        gdelta[2] += goff[k][2] / g.dtheta();
    }
    const auto J = exp_jacobian(mc);
    for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int i = 0; i < 3; ++i) acc += gdelta[i] * J[i][j];
        (*gc)[j] += -T * acc;
    }
}

void linear_convolve_backward(const KernelStencil& kernel, Padding pad, const M2FeatureMap& gout, M2FeatureMap& gin) {
    check_same_grid(gout, gin, "linear_convolve_backward");
    const SliceTaps taps = convolution_taps(gout.grid(), kernel);
    for (int ch = 0; ch < gout.channels(); ++ch)
        apply_linear_adjoint(gout.channel(ch), gout.grid(), pad, taps, gin.channel(ch));
}

void diffuse_backward(const M2FeatureMap& U, const MetricParams& metric, double t, const StencilRadii& radii,
                      Padding pad, const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric) {
    check_same_grid(U, gout, "diffuse_backward");
    const M2Grid& g = U.grid();
    const DiffusionKernelSpec spec{metric, t};
    const KernelStencil kernel = sample_diffusion_kernel(spec, g.orientations, radii);
    if (gin) linear_convolve_backward(kernel, pad, gout, *gin);
    if (!gmetric) return;

    const auto dK = diffusion_kernel_gradient(spec, g.orientations, radii);
    const StencilTaps taps = stencil_taps(g, kernel);
    const int margin = required_margin(taps);
    const std::size_t Q = kernel.size();
    std::vector<double> S(static_cast<std::size_t>(g.orientations) * Q, 0.0);
    for (int ch = 0; ch < U.channels(); ++ch) {
        const PaddedChannel src(U.channel(ch), g, margin, pad);
        parallel_for(g.orientations, [&](int k) {
            const double* go = gout.data().data() + gout.index(ch, k, 0, 0);
            for (std::size_t n = 0; n < Q; ++n) {
                const TapSet& ts = taps[k][n];
                double acc = 0.0;
                for (int i = 0; i < ts.count; ++i) {
                    const Tap& tp = ts.taps[i];
                    acc += tp.w * slice_dot(go, src.origin(tp.k) + tp.dy * src.stride() + tp.dx, src.stride(),
                                            g.width, g.height);
                }
                S[k * Q + n] += acc;
            }
        });
    }
    for (int k = 0; k < g.orientations; ++k)
        for (std::size_t n = 0; n < Q; ++n)
            for (int i = 0; i < 3; ++i) (*gmetric)[i] += S[k * Q + n] * dK[n][i] * kernel.cell_volume;
}

std::vector<double> morph_backward(const MorphResult& fwd, const KernelStencil& kernel, Padding pad,
                                   const M2FeatureMap& gout, M2FeatureMap* gin, double sign) {
    const M2FeatureMap& out = fwd.output;
    check_same_grid(out, gout, "morph_backward");
    if (fwd.argmin.size() != out.size()) throw std::invalid_argument("morph_backward: argmin has the wrong size");
    const M2Grid& g = out.grid();
    const StencilTaps taps = stencil_taps(g, kernel);
    const int margin = required_margin(taps);
    std::vector<double> gk(kernel.size(), 0.0);
    for (int ch = 0; ch < out.channels(); ++ch) {
        PaddedAccumulator acc(g, margin);
        for (int k = 0; k < g.orientations; ++k)
            for (int y = 0; y < g.height; ++y)
                for (int x = 0; x < g.width; ++x) {
                    const std::size_t v = out.index(ch, k, y, x);
                    const int n = fwd.argmin[v];
                    // Clipped outputs are constant in every input.
                    if (n < 0 || std::abs(out.data()[v]) >= kSentinel) continue;
                    const double go = gout.data()[v];
                    if (go == 0.0) continue;
                    gk[n] += sign * go;
                    if (!gin) continue;
                    const TapSet& ts = taps[k][n];
                    for (int i = 0; i < ts.count; ++i) {
                        const Tap& tp = ts.taps[i];
                        acc.origin(tp.k)[(y + tp.dy) * acc.stride() + x + tp.dx] += go * tp.w;
                    }
                }
        if (gin) acc.fold_into(gin->channel(ch), pad);
    }
    return gk;
}

namespace {

void morph_metric_grad(const std::vector<double>& gk, const MorphKernelSpec& spec, const KernelStencil& kernel,
                       Grad3& gmetric) {
    const auto dk = morph_kernel_gradient(spec, kernel.orientations, kernel.radii);
    for (std::size_t n = 0; n < gk.size(); ++n)
        for (int i = 0; i < 3; ++i) gmetric[i] += gk[n] * dk[n][i];
}

}  // namespace

void erode_backward(const MorphResult& fwd, const MorphKernelSpec& spec, const KernelStencil& kernel, Padding pad,
                    const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric) {
    const auto gk = morph_backward(fwd, kernel, pad, gout, gin, 1.0);
    if (gmetric) morph_metric_grad(gk, spec, kernel, *gmetric);
}

void dilate_backward(const MorphResult& fwd, const MorphKernelSpec& spec, const KernelStencil& kernel, Padding pad,
                     const M2FeatureMap& gout, M2FeatureMap* gin, Grad3* gmetric) {
    const auto gk = morph_backward(fwd, kernel, pad, gout, gin, -1.0);
    if (gmetric) morph_metric_grad(gk, spec, kernel, *gmetric);
}

void lift_backward(const Image2D& img, const LiftBank& bank, Padding pad, const M2FeatureMap& gout,
                   std::vector<double>& gbase, Image2D* gimg) {
    const int W = img.width(), H = img.height(), m = bank.size(), h = m / 2, K = bank.orientations();
    const int Ci = bank.in_channels(), Co = bank.out_channels();
    if (gout.grid() != M2Grid(W, H, K) || gout.channels() != Co)
        throw std::invalid_argument("lift_backward: gradient shape does not match the lifted shape");
    if (gbase.size() != bank.base().size()) throw std::invalid_argument("lift_backward: gbase has the wrong size");

    const int PW = W + 2 * h, PH = H + 2 * h;
    std::vector<int> xs(PW), ys(PH);
    for (int i = 0; i < PW; ++i) xs[i] = resolve_index(i - h, W, pad);
    for (int i = 0; i < PH; ++i) ys[i] = resolve_index(i - h, H, pad);
    std::vector<double> padded(static_cast<std::size_t>(Ci) * PW * PH, 0.0);
    for (int ci = 0; ci < Ci; ++ci)
        for (int py = 0; py < PH; ++py)
            for (int px = 0; px < PW; ++px)
                if (ys[py] >= 0 && xs[px] >= 0)
                    padded[(static_cast<std::size_t>(ci) * PH + py) * PW + px] = img(ci, ys[py], xs[px]);

    const std::size_t P = bank.kernel_pixels();
    const std::size_t bank_size = bank.base().size();
    // Gradient of every rotated kernel, then pulled back through the rotation taps.
    std::vector<double> grot(bank_size * K, 0.0);
    std::vector<double> gpad(gimg ? static_cast<std::size_t>(Co) * K * Ci * PW * PH : 0, 0.0);
    parallel_for(Co * K, [&](int job) {
        const int c = job / K, k = job % K;
        const double* go = gout.data().data() + gout.index(c, k, 0, 0);
        const auto rot = bank.rotated(k);
        for (int ci = 0; ci < Ci; ++ci) {
            const std::size_t pair = static_cast<std::size_t>(c) * Ci + ci;
            const double* src = padded.data() + static_cast<std::size_t>(ci) * PH * PW;
            double* gr = grot.data() + k * bank_size + pair * P;
            double* gp = gimg ? gpad.data() + (static_cast<std::size_t>(job) * Ci + ci) * PW * PH : nullptr;
            for (int v = 0; v < m; ++v)
                for (int u = 0; u < m; ++u) {
                    gr[v * m + u] += slice_dot(go, src + static_cast<std::size_t>(v) * PW + u, PW, W, H);
                    if (!gp) continue;
                    const double w = rot[pair * P + v * m + u];
                    if (w == 0.0) continue;
                    for (int y = 0; y < H; ++y) {
                        double* row = gp + static_cast<std::size_t>(y + v) * PW + u;
                        const double* gor = go + static_cast<std::size_t>(y) * W;
                        for (int x = 0; x < W; ++x) row[x] += w * gor[x];
                    }
                }
        }
    });

    const std::size_t pairs = static_cast<std::size_t>(Co) * Ci;
    for (int k = 0; k < K; ++k) {
        const auto& taps = bank.taps(k);
        for (std::size_t pair = 0; pair < pairs; ++pair) {
            const double* gr = grot.data() + k * bank_size + pair * P;
            double* gb = gbase.data() + pair * P;
            for (std::size_t p = 0; p < P; ++p)
                for (const auto& t : taps[p]) gb[t.src] += t.w * gr[p];
        }
    }

    if (!gimg) return;
    if (gimg->width() != W || gimg->height() != H || gimg->channels() != Ci)
        throw std::invalid_argument("lift_backward: image gradient has the wrong shape");
    for (int job = 0; job < Co * K; ++job)
        for (int ci = 0; ci < Ci; ++ci) {
            const double* gp = gpad.data() + (static_cast<std::size_t>(job) * Ci + ci) * PW * PH;
            for (int py = 0; py < PH; ++py) {
                if (ys[py] < 0) continue;
                for (int px = 0; px < PW; ++px)
                    if (xs[px] >= 0) (*gimg)(ci, ys[py], xs[px]) += gp[static_cast<std::size_t>(py) * PW + px];
            }
        }
}

void project_max_backward(const std::vector<int>& argmax, const Image2D& gout, M2FeatureMap& gin) {
    const M2Grid& g = gin.grid();
    if (gout.width() != g.width || gout.height() != g.height || gout.channels() != gin.channels() ||
        argmax.size() != gout.data().size())
        throw std::invalid_argument("project_max_backward: shape mismatch");
    for (int c = 0; c < gout.channels(); ++c)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) gin(c, argmax[gout.index(c, y, x)], y, x) += gout(c, y, x);
}

CDELayerGrad::CDELayerGrad(const CDELayerSpec& spec)
    : channels(spec.channels.size()), a(spec.affine.a.size(), 0.0), b(spec.affine.b.size(), 0.0) {}

M2FeatureMap cde_layer_backward(const M2FeatureMap& input, const CDELayerSpec& spec, const CDETrace& trace,
                                const M2FeatureMap& gout, CDELayerGrad& grad) {
    const AffineParams& af = spec.affine;
    const M2Grid& g = input.grid();
    if (gout.grid() != g || gout.channels() != af.rows)
        throw std::invalid_argument("cde_layer_backward: gradient shape does not match the layer output");
    if (trace.channels.size() != spec.channels.size())
        throw std::invalid_argument("cde_layer_backward: trace does not belong to this layer");
    if (grad.channels.size() != spec.channels.size()) grad = CDELayerGrad(spec);

    // Standardization, then the affine mix.
    const std::size_t n = g.voxels();
    M2FeatureMap gy = gout;
    for (int i = 0; i < af.rows; ++i) {
        if (!af.normalized(i)) continue;
        auto gz = gy.channel(i);
        const auto y = trace.combined.channel(i);
        const double mu = trace.mean[i], sd = trace.stddev[i], den = sd + kNormEpsilon;
        double mean_gz = 0.0, cov = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            mean_gz += gz[v];
            cov += gz[v] * (y[v] - mu);
        }
        mean_gz /= static_cast<double>(n);
        const double coef = sd > 0.0 ? cov / (static_cast<double>(n) * sd * den * den) : 0.0;
        for (std::size_t v = 0; v < n; ++v) gz[v] = (gz[v] - mean_gz) / den - (y[v] - mu) * coef;
    }

    std::vector<M2FeatureMap> ge;
    ge.reserve(af.cols);
    for (int j = 0; j < af.cols; ++j) ge.emplace_back(g, 1);
    for (int i = 0; i < af.rows; ++i) {
        const auto gi = gy.channel(i);
        double sb = 0.0;
        for (double v : gi) sb += v;
        grad.b[i] += sb;
        for (int j = 0; j < af.cols; ++j) {
            const auto e = trace.channels[j].eroded.output.channel(0);
            double sa = 0.0;
            for (std::size_t v = 0; v < n; ++v) sa += gi[v] * e[v];
            grad.a[static_cast<std::size_t>(i) * af.cols + j] += sa;
            const double a = af.at(i, j);
            if (a == 0.0) continue;
            auto dst = ge[j].channel(0);
            for (std::size_t v = 0; v < n; ++v) dst[v] += a * gi[v];
        }
    }

    M2FeatureMap gin(g, input.channels());
    for (int j = 0; j < spec.in_channels(); ++j) {
        const ChannelPDE& ch = spec.channels[j];
        const CDEChannelTrace& ct = trace.channels[j];
        ChannelPDEGrad& cg = grad.channels[j];

        M2FeatureMap g_dil(g, 1);
        erode_backward(ct.eroded, {ch.erosion, spec.T, spec.alpha}, ct.erosion_kernel, spec.padding, ge[j], &g_dil,
                       &cg.erosion);
        M2FeatureMap g_pre(g, 1);
        dilate_backward(ct.dilated, {ch.dilation, spec.T, spec.alpha}, ct.dilation_kernel, spec.padding, g_dil, &g_pre,
                        &cg.dilation);
        if (ch.diffusion) {
            M2FeatureMap g_conv(g, 1);
            diffuse_backward(ct.convected, *ch.diffusion, spec.T, spec.radii, spec.padding, g_pre, &g_conv,
                             &cg.diffusion);
            g_pre = std::move(g_conv);
        }
        M2FeatureMap g_in(g, 1);
        convect_backward(input.extract(j), ch.convection, spec.T, spec.padding, g_pre, &g_in, &cg.convection);
        gin.assign_channel(j, g_in);
    }
    return gin;
}

}  // namespace lietorch
