#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lietorch/field.hpp"

namespace lietorch {

/// Raw LTF tensor: "LTF1", u32 rank, u32 dims[rank], float32 payload (all little-endian).
struct LtfTensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t count() const;
};

void write_ltf(const std::filesystem::path& path, std::span<const std::uint32_t> dims, std::span<const double> values);
LtfTensor read_ltf(const std::filesystem::path& path);

/// Sidecar path: "<path>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Writes dims (C, K, H, W) plus a sidecar with axis names and grid metadata.
void write_feature_map(const std::filesystem::path& path, const M2FeatureMap& map);
/// Accepts rank 4 (C, K, H, W) or rank 3 (K, H, W) tensors.
M2FeatureMap read_feature_map(const std::filesystem::path& path);

/// Writes dims (C, H, W) plus a sidecar.
void write_image(const std::filesystem::path& path, const Image2D& img);
/// Accepts rank 3 (C, H, W) or rank 2 (H, W) tensors.
Image2D read_image(const std::filesystem::path& path);

/// Binary P5 grayscale, maxval 255, values mapped to [0, 1].
Image2D read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image2D& img, int channel = 0);

/// PGM or LTF depending on the file extension.
Image2D load_image_any(const std::filesystem::path& path);

}  // namespace lietorch
