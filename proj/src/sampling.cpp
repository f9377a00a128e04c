#include "lietorch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "lietorch/parallel.hpp"

namespace lietorch {

namespace {

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

struct Split {
    int base;
    double frac;
};

Split split(double v) {
    const double f = std::floor(v);
    return {static_cast<int>(f), v - f};
}

int wrap_k(int k, int n) {
    int r = k % n;
    return r < 0 ? r + n : r;
}

}  // namespace

SampleOffset right_action_offset(const M2Grid& grid, int k, const SE2& delta) {
    const double th = grid.theta(k);
    const double c = std::cos(th), s = std::sin(th);
    return {c * delta.x - s * delta.y, s * delta.x + c * delta.y, k + delta.theta / grid.dtheta()};
}

TapSet trilinear_taps(const M2Grid& grid, const SampleOffset& off) {
    const Split sx = split(snap(off.ox)), sy = split(snap(off.oy)), sk = split(snap(off.ok));
    TapSet out;
    for (int a = 0; a < 2; ++a) {
        const double wk = a ? sk.frac : 1.0 - sk.frac;
        if (wk == 0.0) continue;
        const int k = wrap_k(sk.base + a, grid.orientations);
        for (int b = 0; b < 2; ++b) {
            const double wy = b ? sy.frac : 1.0 - sy.frac;
            if (wy == 0.0) continue;
            for (int c = 0; c < 2; ++c) {
                const double wx = c ? sx.frac : 1.0 - sx.frac;
                if (wx == 0.0) continue;
                out.taps[out.count++] = Tap{sx.base + c, sy.base + b, k, wk * wy * wx};
            }
        }
    }
    return out;
}

std::array<TapGrad, 8> trilinear_tap_grads(const M2Grid& grid, const SampleOffset& off) {
    const Split sx = split(snap(off.ox)), sy = split(snap(off.oy)), sk = split(snap(off.ok));
    std::array<TapGrad, 8> out{};
    int n = 0;
    for (int a = 0; a < 2; ++a) {
        const double wk = a ? sk.frac : 1.0 - sk.frac;
        const double dk = a ? 1.0 : -1.0;
        const int k = wrap_k(sk.base + a, grid.orientations);
        for (int b = 0; b < 2; ++b) {
            const double wy = b ? sy.frac : 1.0 - sy.frac;
            const double dy = b ? 1.0 : -1.0;
            for (int c = 0; c < 2; ++c) {
                const double wx = c ? sx.frac : 1.0 - sx.frac;
                const double dx = c ? 1.0 : -1.0;
                out[n++] = TapGrad{Tap{sx.base + c, sy.base + b, k, wk * wy * wx}, wk * wy * dx, wk * dy * wx,
                                   dk * wy * wx};
            }
        }
    }
    return out;
}

void accumulate_taps(std::vector<Tap>& dst, const TapSet& taps, double weight) {
    for (int i = 0; i < taps.count; ++i) {
        const Tap& t = taps.taps[i];
        auto it = std::find_if(dst.begin(), dst.end(),
                               [&](const Tap& d) { return d.dx == t.dx && d.dy == t.dy && d.k == t.k; });
        if (it != dst.end()) {
            it->w += weight * t.w;
        } else {
            dst.push_back(Tap{t.dx, t.dy, t.k, weight * t.w});
        }
    }
}

int required_margin(const SliceTaps& taps) {
    int m = 0;
    for (const auto& slice : taps)
        for (const auto& t : slice) m = std::max({m, std::abs(t.dx), std::abs(t.dy)});
    return m;
}

int required_margin(const std::vector<TapSet>& taps) {
    int m = 0;
    for (const auto& set : taps)
        for (int i = 0; i < set.count; ++i) m = std::max({m, std::abs(set.taps[i].dx), std::abs(set.taps[i].dy)});
    return m;
}

PaddedChannel::PaddedChannel(std::span<const double> src, const M2Grid& grid, int margin, Padding pad)
    : grid_(grid), margin_(margin), stride_(grid.width + 2 * margin) {
    const int ph = grid.height + 2 * margin;
    data_.assign(static_cast<std::size_t>(grid.orientations) * ph * stride_, 0.0);
    std::vector<int> xs(stride_), ys(ph);
    for (int i = 0; i < stride_; ++i) xs[i] = resolve_index(i - margin, grid.width, pad);
    for (int i = 0; i < ph; ++i) ys[i] = resolve_index(i - margin, grid.height, pad);
    for (int k = 0; k < grid.orientations; ++k) {
        double* dst = data_.data() + static_cast<std::size_t>(k) * ph * stride_;
        const double* s = src.data() + static_cast<std::size_t>(k) * grid.slice_size();
        for (int py = 0; py < ph; ++py) {
            if (ys[py] < 0) continue;
            const double* row = s + static_cast<std::size_t>(ys[py]) * grid.width;
            for (int px = 0; px < stride_; ++px)
                if (xs[px] >= 0) dst[static_cast<std::size_t>(py) * stride_ + px] = row[xs[px]];
        }
    }
}

std::size_t PaddedChannel::slice_offset(int k) const {
    const int ph = grid_.height + 2 * margin_;
    return static_cast<std::size_t>(k) * ph * stride_ + static_cast<std::size_t>(margin_) * stride_ + margin_;
}

PaddedAccumulator::PaddedAccumulator(const M2Grid& grid, int margin)
    : grid_(grid), margin_(margin), stride_(grid.width + 2 * margin) {
    data_.assign(static_cast<std::size_t>(grid.orientations) * (grid.height + 2 * margin) * stride_, 0.0);
}

std::size_t PaddedAccumulator::slice_offset(int k) const {
    const int ph = grid_.height + 2 * margin_;
    return static_cast<std::size_t>(k) * ph * stride_ + static_cast<std::size_t>(margin_) * stride_ + margin_;
}

void PaddedAccumulator::fold_into(std::span<double> dst, Padding pad) const {
    const int ph = grid_.height + 2 * margin_;
    std::vector<int> xs(stride_), ys(ph);
    for (int i = 0; i < stride_; ++i) xs[i] = resolve_index(i - margin_, grid_.width, pad);
    for (int i = 0; i < ph; ++i) ys[i] = resolve_index(i - margin_, grid_.height, pad);
    for (int k = 0; k < grid_.orientations; ++k) {
        const double* s = data_.data() + static_cast<std::size_t>(k) * ph * stride_;
        double* d = dst.data() + static_cast<std::size_t>(k) * grid_.slice_size();
        for (int py = 0; py < ph; ++py) {
            if (ys[py] < 0) continue;
            double* row = d + static_cast<std::size_t>(ys[py]) * grid_.width;
            for (int px = 0; px < stride_; ++px)
                if (xs[px] >= 0) row[xs[px]] += s[static_cast<std::size_t>(py) * stride_ + px];
        }
    }
}

void apply_linear(std::span<const double> src, const M2Grid& grid, Padding pad, const SliceTaps& taps,
                  std::span<double> dst) {
    const PaddedChannel padded(src, grid, required_margin(taps), pad);
    const int W = grid.width, H = grid.height, stride = padded.stride();
    parallel_for(grid.orientations, [&](int k) {
        double* out = dst.data() + static_cast<std::size_t>(k) * grid.slice_size();
        std::fill(out, out + grid.slice_size(), 0.0);
        for (const Tap& t : taps[k]) {
            const double* base = padded.origin(t.k) + t.dy * stride + t.dx;
            for (int y = 0; y < H; ++y) {
                const double* row = base + static_cast<std::ptrdiff_t>(y) * stride;
                double* o = out + static_cast<std::size_t>(y) * W;
                for (int x = 0; x < W; ++x) o[x] += t.w * row[x];
            }
        }
    });
}

void apply_linear_adjoint(std::span<const double> gout, const M2Grid& grid, Padding pad,
                          const SliceTaps& taps, std::span<double> gsrc) {
    PaddedAccumulator acc(grid, required_margin(taps));
    const int W = grid.width, H = grid.height, stride = acc.stride();
    for (int k = 0; k < grid.orientations; ++k) {
        const double* g = gout.data() + static_cast<std::size_t>(k) * grid.slice_size();
        for (const Tap& t : taps[k]) {
            double* base = acc.origin(t.k) + t.dy * stride + t.dx;
            for (int y = 0; y < H; ++y) {
                double* row = base + static_cast<std::ptrdiff_t>(y) * stride;
                const double* gi = g + static_cast<std::size_t>(y) * W;
                for (int x = 0; x < W; ++x) row[x] += t.w * gi[x];
            }
        }
    }
    acc.fold_into(gsrc, pad);
}

}  // namespace lietorch
