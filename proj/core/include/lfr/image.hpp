#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

namespace lfr {

// Row-major single-channel float raster with value semantics.
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, float fill = 0.0f);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  float at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  // Non-owning OpenCV header over this plane's storage.
  cv::Mat1f mat() { return cv::Mat1f(height_, width_, data_.data()); }
  cv::Mat1f mat() const { return cv::Mat1f(height_, width_, const_cast<float*>(data_.data())); }

  static Plane from_mat(const cv::Mat1f& m);

  bool operator==(const Plane&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

struct FingerprintImage {
  Plane pixels;
  std::optional<int> dpi_hint;

  int height() const { return pixels.height(); }
  int width() const { return pixels.width(); }
  bool operator==(const FingerprintImage&) const = default;
};

// Throws ValidationError unless values lie in [0,1] and (when require_div16)
// both dimensions are multiples of 16.
void validate(const FingerprintImage& img, bool require_div16 = true);

enum class MapChannel : int { kRidge = 0, kFrequency = 1, kOrientation = 2, kSegmentation = 3 };
inline constexpr int kMapChannels = 4;
inline constexpr std::array<std::string_view, kMapChannels> kMapChannelNames = {
    "ridge", "frequency", "orientation", "segmentation"};

// Depth-wise [R, F, O, S] stack.
struct MapStack {
  std::array<Plane, kMapChannels> channels;

  Plane& operator[](MapChannel c) { return channels[static_cast<int>(c)]; }
  const Plane& operator[](MapChannel c) const { return channels[static_cast<int>(c)]; }
  Plane& ridge() { return (*this)[MapChannel::kRidge]; }
  const Plane& ridge() const { return (*this)[MapChannel::kRidge]; }
  Plane& frequency() { return (*this)[MapChannel::kFrequency]; }
  const Plane& frequency() const { return (*this)[MapChannel::kFrequency]; }
  Plane& orientation() { return (*this)[MapChannel::kOrientation]; }
  const Plane& orientation() const { return (*this)[MapChannel::kOrientation]; }
  Plane& segmentation() { return (*this)[MapChannel::kSegmentation]; }
  const Plane& segmentation() const { return (*this)[MapChannel::kSegmentation]; }

  int height() const { return channels[0].height(); }
  int width() const { return channels[0].width(); }

  bool operator==(const MapStack&) const = default;
};

MapStack make_stack(int height, int width, float fill = 0.0f);

// Throws ValidationError if channel shapes differ or any value leaves [0,1].
void validate(const MapStack& stack);

// Ground-truth invariant: background pixels carry zero frequency and orientation.
bool background_is_clear(const MapStack& stack);

}  // namespace lfr
