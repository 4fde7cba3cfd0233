#include "lfr/image.hpp"

#include <cmath>
#include <string>

#include "lfr/errors.hpp"

namespace lfr {

Plane::Plane(int height, int width, float fill)
    : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
  if (height < 0 || width < 0) throw ValidationError("negative plane dimensions");
}

Plane Plane::from_mat(const cv::Mat1f& m) {
  Plane p(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const float* row = m.ptr<float>(y);
    std::copy(row, row + m.cols, p.data_.begin() + static_cast<std::ptrdiff_t>(y) * m.cols);
  }
  return p;
}

void validate(const FingerprintImage& img, bool require_div16) {
  if (img.pixels.empty()) throw ValidationError("empty image");
  if (require_div16 && (img.height() % 16 != 0 || img.width() % 16 != 0)) {
    throw ValidationError("image dimensions " + std::to_string(img.height()) + "x" +
                          std::to_string(img.width()) + " are not multiples of 16");
  }
  for (float v : img.pixels.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image value outside [0,1]");
  }
}

MapStack make_stack(int height, int width, float fill) {
  MapStack s;
  for (auto& c : s.channels) c = Plane(height, width, fill);
  return s;
}

void validate(const MapStack& stack) {
  const int h = stack.height();
  const int w = stack.width();
  for (int c = 0; c < kMapChannels; ++c) {
    const Plane& p = stack.channels[c];
    if (p.height() != h || p.width() != w) {
      throw ValidationError("map stack channel " + std::string(kMapChannelNames[c]) +
                            " has mismatched shape");
    }
    for (float v : p.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw ValidationError("map stack channel " + std::string(kMapChannelNames[c]) +
                              " has a value outside [0,1]");
      }
    }
  }
}

bool background_is_clear(const MapStack& stack) {
  const auto seg = stack.segmentation().values();
  const auto freq = stack.frequency().values();
  const auto ori = stack.orientation().values();
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] == 0.0f && (freq[i] != 0.0f || ori[i] != 0.0f)) return false;
  }
  return true;
}

}  // namespace lfr
