#pragma once

#include <span>
#include <vector>

#include "lietorch/field.hpp"

namespace lietorch {

/// Trainable lifting kernels: one odd-sized m x m kernel per (output, input)
/// channel pair, plus K rotated copies resampled bilinearly about the center.
class LiftBank {
public:
    /// Bilinear resampling weight of base pixel `src` in a rotated kernel pixel.
    struct RotationTap {
        int src = 0;
        double w = 0.0;
    };

    LiftBank() = default;
    LiftBank(int out_channels, int in_channels, int size, int orientations);

    int out_channels() const { return out_channels_; }
    int in_channels() const { return in_channels_; }
    int size() const { return size_; }
    int orientations() const { return orientations_; }
    std::size_t kernel_pixels() const { return static_cast<std::size_t>(size_) * size_; }

    /// Base kernels, laid out (out, in, v, u).
    std::span<const double> base() const { return base_; }
    void set_base(std::span<const double> values);

    /// Rotated kernel for orientation k, laid out like base().
    std::span<const double> rotated(int k) const;

    /// taps(k)[p]: base pixels contributing to pixel p of a rotated kernel.
    const std::vector<std::vector<RotationTap>>& taps(int k) const { return taps_[k]; }

private:
    void rebuild();

    int out_channels_ = 0;
    int in_channels_ = 0;
    int size_ = 0;
    int orientations_ = 0;
    std::vector<double> base_;
    std::vector<double> rotated_;
    std::vector<std::vector<std::vector<RotationTap>>> taps_;
};

/// out(c, k, y, x) = sum_ci sum_u rot_k[c, ci](u) img_ci(x + u_x, y + u_y).
M2FeatureMap lift(const Image2D& img, const LiftBank& bank, Padding pad = Padding::zero);

/// Maximum over orientations; argmax (optional) receives the winning k per pixel.
Image2D project_max(const M2FeatureMap& map, std::vector<int>* argmax = nullptr);

}  // namespace lietorch
