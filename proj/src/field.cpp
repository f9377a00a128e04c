#include "lietorch/field.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lietorch {

Padding parse_padding(std::string_view name) {
    if (name == "zero") return Padding::zero;
    if (name == "replicate") return Padding::replicate;
    if (name == "periodic") return Padding::periodic;
    throw std::invalid_argument("unknown padding policy: " + std::string(name));
}

std::string_view padding_name(Padding p) {
    switch (p) {
        case Padding::zero: return "zero";
        case Padding::replicate: return "replicate";
        case Padding::periodic: return "periodic";
    }
    return "zero";
}

M2Grid::M2Grid(int w, int h, int k) : width(w), height(h), orientations(k) {
    if (w < 1 || h < 1) throw std::invalid_argument("M2Grid: width and height must be >= 1");
    if (k < 2) throw std::invalid_argument("M2Grid: at least two orientations are required");
}

M2FeatureMap::M2FeatureMap(const M2Grid& grid, int channels, double fill)
    : grid_(grid), channels_(channels), data_(grid.voxels() * static_cast<std::size_t>(channels), fill) {
    if (channels < 1) throw std::invalid_argument("M2FeatureMap: channels must be >= 1");
}

std::span<double> M2FeatureMap::channel(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.voxels(), grid_.voxels()};
}

std::span<const double> M2FeatureMap::channel(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * grid_.voxels(), grid_.voxels()};
}

M2FeatureMap M2FeatureMap::extract(int c) const {
    M2FeatureMap out(grid_, 1);
    auto src = channel(c);
    std::copy(src.begin(), src.end(), out.data_.begin());
    return out;
}

void M2FeatureMap::assign_channel(int c, const M2FeatureMap& single) {
    if (!(single.grid() == grid_)) throw std::invalid_argument("assign_channel: grid mismatch");
    auto src = single.channel(0);
    std::copy(src.begin(), src.end(), channel(c).begin());
}

Image2D::Image2D(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels),
      data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width < 1 || height < 1 || channels < 1) throw std::invalid_argument("Image2D: empty shape");
}

int resolve_index(int i, int n, Padding pad) {
    if (i >= 0 && i < n) return i;
    switch (pad) {
        case Padding::zero: return -1;
        case Padding::replicate: return i < 0 ? 0 : n - 1;
        case Padding::periodic: {
            int r = i % n;
            return r < 0 ? r + n : r;
        }
    }
    return -1;
}

double sample(const M2FeatureMap& map, int channel, double x, double y, double theta, Padding pad) {
    const M2Grid& g = map.grid();
    if (channel < 0 || channel >= map.channels()) throw std::out_of_range("sample: channel");
    const double kt = wrap_angle(theta) / g.dtheta();
    const double fx0 = std::floor(x), fy0 = std::floor(y), fk0 = std::floor(kt);
    const double fx = x - fx0, fy = y - fy0, fk = kt - fk0;
    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0), k0 = static_cast<int>(fk0);
    double acc = 0.0;
    for (int dk = 0; dk < 2; ++dk) {
        const double wk = dk ? fk : 1.0 - fk;
        if (wk == 0.0) continue;
        const int k = resolve_index(k0 + dk, g.orientations, Padding::periodic);
        for (int dy = 0; dy < 2; ++dy) {
            const double wy = dy ? fy : 1.0 - fy;
            if (wy == 0.0) continue;
            const int yy = resolve_index(y0 + dy, g.height, pad);
            if (yy < 0) continue;
            for (int dx = 0; dx < 2; ++dx) {
                const double wx = dx ? fx : 1.0 - fx;
                if (wx == 0.0) continue;
                const int xx = resolve_index(x0 + dx, g.width, pad);
                if (xx < 0) continue;
                acc += wk * wy * wx * map(channel, k, yy, xx);
            }
        }
    }
    return acc;
}

namespace {

// Source spatial index for output (X, Y) under a quarter rotation j about the center.
inline void quarter_source(int j, int n, int X, int Y, int& x, int& y) {
    switch (j) {
        case 0: x = X; y = Y; break;
        case 1: x = Y; y = n - 1 - X; break;
        case 2: x = n - 1 - X; y = n - 1 - Y; break;
        default: x = n - 1 - Y; y = X; break;
    }
}

}  // namespace

M2FeatureMap rotate_quarter(const M2FeatureMap& map, int j) {
    const M2Grid& g = map.grid();
    if (g.width != g.height) throw std::invalid_argument("rotate_quarter: requires a square grid");
    if (g.orientations % 4 != 0) throw std::invalid_argument("rotate_quarter: orientations must be divisible by 4");
    j = ((j % 4) + 4) % 4;
    const int n = g.width;
    const int shift = j * g.orientations / 4;
    M2FeatureMap out(g, map.channels());
    for (int c = 0; c < map.channels(); ++c)
        for (int k = 0; k < g.orientations; ++k) {
            const int ks = (k - shift + g.orientations) % g.orientations;
            for (int Y = 0; Y < n; ++Y)
                for (int X = 0; X < n; ++X) {
                    int x, y;
                    quarter_source(j, n, X, Y, x, y);
                    out(c, k, Y, X) = map(c, ks, y, x);
                }
        }
    return out;
}

Image2D rotate_quarter(const Image2D& img, int j) {
    if (img.width() != img.height()) throw std::invalid_argument("rotate_quarter: requires a square image");
    j = ((j % 4) + 4) % 4;
    const int n = img.width();
    Image2D out(n, n, img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int Y = 0; Y < n; ++Y)
            for (int X = 0; X < n; ++X) {
                int x, y;
                quarter_source(j, n, X, Y, x, y);
                out(c, Y, X) = img(c, y, x);
            }
    return out;
}

M2FeatureMap translate_int(const M2FeatureMap& map, int dx, int dy, Padding pad) {
    const M2Grid& g = map.grid();
    M2FeatureMap out(g, map.channels());
    for (int c = 0; c < map.channels(); ++c)
        for (int k = 0; k < g.orientations; ++k)
            for (int y = 0; y < g.height; ++y) {
                const int ys = resolve_index(y - dy, g.height, pad);
                for (int x = 0; x < g.width; ++x) {
                    const int xs = resolve_index(x - dx, g.width, pad);
                    out(c, k, y, x) = (xs < 0 || ys < 0) ? 0.0 : map(c, k, ys, xs);
                }
            }
    return out;
}

Image2D translate_int(const Image2D& img, int dx, int dy, Padding pad) {
    Image2D out(img.width(), img.height(), img.channels());
    for (int c = 0; c < img.channels(); ++c)
        for (int y = 0; y < img.height(); ++y) {
            const int ys = resolve_index(y - dy, img.height(), pad);
            for (int x = 0; x < img.width(); ++x) {
                const int xs = resolve_index(x - dx, img.width(), pad);
                out(c, y, x) = (xs < 0 || ys < 0) ? 0.0 : img(c, ys, xs);
            }
        }
    return out;
}

}  // namespace lietorch
