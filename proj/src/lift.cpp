#include "lietorch/lift.hpp"

#include <cmath>
#include <stdexcept>

#include "lietorch/parallel.hpp"

namespace lietorch {

namespace {

double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

LiftBank::LiftBank(int out_channels, int in_channels, int size, int orientations)
    : out_channels_(out_channels), in_channels_(in_channels), size_(size), orientations_(orientations) {
    if (size < 1 || size % 2 == 0) throw std::invalid_argument("LiftBank: kernel size must be odd");
    if (out_channels < 1 || in_channels < 1) throw std::invalid_argument("LiftBank: empty channel count");
    if (orientations < 2) throw std::invalid_argument("LiftBank: at least two orientations are required");
    base_.assign(static_cast<std::size_t>(out_channels) * in_channels * kernel_pixels(), 0.0);

    const int h = size / 2;
    const double dtheta = kTwoPi / orientations;
    taps_.resize(orientations);
    for (int k = 0; k < orientations; ++k) {
        const double c = std::cos(k * dtheta), s = std::sin(k * dtheta);
        auto& per_pixel = taps_[k];
        per_pixel.resize(kernel_pixels());
        for (int v = -h; v <= h; ++v)
            for (int u = -h; u <= h; ++u) {
                // Rotated kernel at u reads the base kernel at R(-theta) u.
                const double bx = snap(c * u + s * v);
                const double by = snap(-s * u + c * v);
                const double fx0 = std::floor(bx), fy0 = std::floor(by);
                const double fx = bx - fx0, fy = by - fy0;
                auto& list = per_pixel[static_cast<std::size_t>(v + h) * size + (u + h)];
                for (int b = 0; b < 2; ++b)
                    for (int a = 0; a < 2; ++a) {
                        const double w = (a ? fx : 1.0 - fx) * (b ? fy : 1.0 - fy);
                        const int sx = static_cast<int>(fx0) + a, sy = static_cast<int>(fy0) + b;
                        if (w == 0.0 || sx < -h || sx > h || sy < -h || sy > h) continue;
                        list.push_back({(sy + h) * size + (sx + h), w});
                    }
            }
    }
    rebuild();
}

void LiftBank::set_base(std::span<const double> values) {
    if (values.size() != base_.size()) throw std::invalid_argument("LiftBank: wrong number of kernel values");
    std::copy(values.begin(), values.end(), base_.begin());
    rebuild();
}

std::span<const double> LiftBank::rotated(int k) const {
    return {rotated_.data() + static_cast<std::size_t>(k) * base_.size(), base_.size()};
}

void LiftBank::rebuild() {
    rotated_.assign(base_.size() * orientations_, 0.0);
    const std::size_t P = kernel_pixels();
    const std::size_t pairs = static_cast<std::size_t>(out_channels_) * in_channels_;
    for (int k = 0; k < orientations_; ++k)
        for (std::size_t pair = 0; pair < pairs; ++pair) {
            const double* src = base_.data() + pair * P;
            double* dst = rotated_.data() + k * base_.size() + pair * P;
            for (std::size_t p = 0; p < P; ++p) {
                double acc = 0.0;
                for (const auto& t : taps_[k][p]) acc += t.w * src[t.src];
                dst[p] = acc;
            }
        }
}

M2FeatureMap lift(const Image2D& img, const LiftBank& bank, Padding pad) {
    if (img.channels() != bank.in_channels())
        throw std::invalid_argument("lift: image channels do not match the lifting bank");
    const int W = img.width(), H = img.height(), m = bank.size(), h = m / 2;
    const M2Grid grid(W, H, bank.orientations());
    M2FeatureMap out(grid, bank.out_channels());

    // Padded copy of every input channel.
    const int PW = W + 2 * h, PH = H + 2 * h;
    std::vector<double> padded(static_cast<std::size_t>(img.channels()) * PW * PH, 0.0);
    for (int ci = 0; ci < img.channels(); ++ci)
        for (int py = 0; py < PH; ++py) {
            const int y = resolve_index(py - h, H, pad);
            if (y < 0) continue;
            for (int px = 0; px < PW; ++px) {
                const int x = resolve_index(px - h, W, pad);
                if (x >= 0) padded[(static_cast<std::size_t>(ci) * PH + py) * PW + px] = img(ci, y, x);
            }
        }

    const std::size_t P = bank.kernel_pixels();
    parallel_for(bank.out_channels() * grid.orientations, [&](int job) {
        const int c = job / grid.orientations, k = job % grid.orientations;
        const auto rot = bank.rotated(k);
        double* dst = out.data().data() + out.index(c, k, 0, 0);
        for (int ci = 0; ci < img.channels(); ++ci) {
            const double* kern = rot.data() + (static_cast<std::size_t>(c) * bank.in_channels() + ci) * P;
            const double* src = padded.data() + static_cast<std::size_t>(ci) * PH * PW;
            for (int v = 0; v < m; ++v)
                for (int u = 0; u < m; ++u) {
                    const double w = kern[v * m + u];
                    if (w == 0.0) continue;
                    for (int y = 0; y < H; ++y) {
                        const double* row = src + static_cast<std::size_t>(y + v) * PW + u;
                        double* o = dst + static_cast<std::size_t>(y) * W;
                        for (int x = 0; x < W; ++x) o[x] += w * row[x];
                    }
                }
        }
    });
    return out;
}

Image2D project_max(const M2FeatureMap& map, std::vector<int>* argmax) {
    const M2Grid& g = map.grid();
    Image2D out(g.width, g.height, map.channels());
    if (argmax) argmax->assign(out.data().size(), 0);
    for (int c = 0; c < map.channels(); ++c)
        for (int y = 0; y < g.height; ++y)
            for (int x = 0; x < g.width; ++x) {
                double best = map(c, 0, y, x);
                int arg = 0;
                for (int k = 1; k < g.orientations; ++k) {
                    const double v = map(c, k, y, x);
                    if (v > best) {
                        best = v;
                        arg = k;
                    }
                }
                out(c, y, x) = best;
                if (argmax) (*argmax)[out.index(c, y, x)] = arg;
            }
    return out;
}

}  // namespace lietorch
