#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "attnflow/tensor.hpp"

namespace attnflow {

/// 8-bit interleaved RGB image, row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * 3 + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * 3 + c];
  }
  bool empty() const noexcept { return pixels.empty(); }
  bool operator==(const RgbImage&) const = default;
};

/// Decodes PNG/JPEG into RGB; InputError when the file cannot be decoded.
RgbImage read_image(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG with fixed encoder settings; IoError on failure.
void write_png(const RgbImage& image, const std::filesystem::path& path);

/// True when a decoder recognises the file signature.
bool is_readable_image(const std::filesystem::path& path);

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height);

/// Counter-clockwise rotation about the image centre, bilinear sampling,
/// exposed corners filled by edge replication. Multiples of 90 degrees on a
/// square image are exact pixel permutations.
RgbImage rotate(const RgbImage& image, double degrees);

/// Per-channel ImageNet normalisation into a 3 x H x W map.
FeatureMap to_normalized_tensor(const RgbImage& image);

/// Resizes to each side length in `scales` (square) and normalises.
std::vector<FeatureMap> preprocess(const RgbImage& image, const std::vector<int>& scales);

}  // namespace attnflow
