#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "lietorch/se2.hpp"

namespace lietorch {

/// Stand-in for +infinity in min-plus arithmetic; results are clipped to it.
inline constexpr double kSentinel = 1e30;

inline double clip_sentinel(double v) {
    return v > kSentinel ? kSentinel : (v < -kSentinel ? -kSentinel : v);
}

/// Spatial boundary handling. The orientation axis is always periodic.
enum class Padding { zero, replicate, periodic };

Padding parse_padding(std::string_view name);
std::string_view padding_name(Padding p);

/// W x H x K sampling of M2 with unit spatial spacing and dtheta = 2 pi / K.
struct M2Grid {
    int width = 1;
    int height = 1;
    int orientations = 2;

    M2Grid() = default;
    M2Grid(int w, int h, int k);

    double dtheta() const { return kTwoPi / orientations; }
    double theta(int k) const { return k * dtheta(); }
    std::size_t slice_size() const { return static_cast<std::size_t>(width) * height; }
    std::size_t voxels() const { return slice_size() * orientations; }

    bool operator==(const M2Grid&) const = default;
};

/// Multi-channel function on an M2Grid, stored row-major as (c, k, y, x).
class M2FeatureMap {
public:
    M2FeatureMap() = default;
    M2FeatureMap(const M2Grid& grid, int channels, double fill = 0.0);

    const M2Grid& grid() const { return grid_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(int c, int k, int y, int x) const {
        return ((static_cast<std::size_t>(c) * grid_.orientations + k) * grid_.height + y) * grid_.width + x;
    }
    double& operator()(int c, int k, int y, int x) { return data_[index(c, k, y, x)]; }
    double operator()(int c, int k, int y, int x) const { return data_[index(c, k, y, x)]; }

    std::span<double> channel(int c);
    std::span<const double> channel(int c) const;

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    /// Single-channel copy of channel c.
    M2FeatureMap extract(int c) const;
    void assign_channel(int c, const M2FeatureMap& single);

private:
    M2Grid grid_;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Multi-channel 2D image stored as (c, y, x).
class Image2D {
public:
    Image2D() = default;
    Image2D(int width, int height, int channels, double fill = 0.0);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }

    std::size_t index(int c, int y, int x) const {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }
    double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
    double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Resolves a possibly out-of-range index under the padding policy.
/// Returns -1 when the read falls into zero padding.
int resolve_index(int i, int n, Padding pad);

/// Trilinear interpolation at (x, y, theta) in grid units / radians.
double sample(const M2FeatureMap& map, int channel, double x, double y, double theta,
              Padding pad = Padding::zero);

/// Grid-exact left action of the rotation by j * pi/2 about the image center.
M2FeatureMap rotate_quarter(const M2FeatureMap& map, int j);
Image2D rotate_quarter(const Image2D& img, int j);

/// Grid-exact spatial shift: out(x + dx, y + dy) = in(x, y).
M2FeatureMap translate_int(const M2FeatureMap& map, int dx, int dy, Padding pad = Padding::zero);
Image2D translate_int(const Image2D& img, int dx, int dy, Padding pad = Padding::zero);

}  // namespace lietorch
