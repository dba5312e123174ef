#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace attnflow {

using Real = double;

/// Dense C x H x W activation volume, channel-major.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
             Real fill = 0.0);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane() const noexcept { return height_ * width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * height_ + h) * width_ + w];
  }
  Real at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * height_ + h) * width_ + w];
  }

  std::span<Real> channel(std::size_t c) {
    return {data_.data() + c * plane(), plane()};
  }
  std::span<const Real> channel(std::size_t c) const {
    return {data_.data() + c * plane(), plane()};
  }

  std::vector<Real>& data() noexcept { return data_; }
  const std::vector<Real>& data() const noexcept { return data_; }

  bool same_shape(const FeatureMap& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }
  bool all_finite() const noexcept;
  std::string shape_string() const;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Real> data_;
};

/// Throws InputError if the map is empty or holds NaN/Inf.
void require_finite(const FeatureMap& x, const char* where);

}  // namespace attnflow
