#include "lfr/mapextract.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <string>

#include <opencv2/imgproc.hpp>

#include "lfr/errors.hpp"

namespace lfr::mapextract {

namespace {

constexpr double kPi = std::numbers::pi;

void require_block_fit(int height, int width, int block_size) {
  if (block_size <= 0 || height % block_size != 0 || width % block_size != 0) {
    throw ValidationError("block size " + std::to_string(block_size) + " does not divide " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
}

double wrap_pi(double theta) {
  double t = std::fmod(theta, kPi);
  if (t < 0.0) t += kPi;
  if (t >= kPi) t -= kPi;
  return t;
}

// Bilinear sample; returns false outside the image.
bool sample(const Plane& p, double x, double y, double& out) {
  if (x < 0.0 || y < 0.0 || x > p.width() - 1 || y > p.height() - 1) return false;
  const int x0 = std::min(static_cast<int>(x), p.width() - 2 < 0 ? 0 : p.width() - 2);
  const int y0 = std::min(static_cast<int>(y), p.height() - 2 < 0 ? 0 : p.height() - 2);
  const int x1 = std::min(x0 + 1, p.width() - 1);
  const int y1 = std::min(y0 + 1, p.height() - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  out = (1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) +
        fy * ((1 - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
  return true;
}

// Estimated period in pixels from a signature, or 0 when no usable peaks.
double signature_period(const std::vector<double>& raw) {
  const std::size_t n = raw.size();
  if (n < 5) return 0.0;
  std::vector<double> s(n);
  s[0] = raw[0];
  s[n - 1] = raw[n - 1];
  for (std::size_t k = 1; k + 1 < n; ++k) s[k] = 0.25 * raw[k - 1] + 0.5 * raw[k] + 0.25 * raw[k + 1];
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  if (*hi - *lo < 1e-3) return 0.0;
  std::vector<std::size_t> peaks;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (s[k] > s[k - 1] && s[k] >= s[k + 1]) peaks.push_back(k);
  }
  if (peaks.size() < 2) return 0.0;
  return static_cast<double>(peaks.back() - peaks.front()) / static_cast<double>(peaks.size() - 1);
}

// 3x3 closing on the grid padded by one background ring, so border gaps are not filled.
BlockGrid close_blocks(const BlockGrid& in) {
  const int rows = in.rows + 2;
  const int cols = in.cols + 2;
  std::vector<float> padded(static_cast<std::size_t>(rows * cols), 0.0f);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c) padded[static_cast<std::size_t>((r + 1) * cols + c + 1)] = in.at(r, c);
  auto filter = [&](const std::vector<float>& src, bool dilate) {
    std::vector<float> dst(src.size());
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        float v = dilate ? 0.0f : 1.0f;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr;
            const int cc = c + dc;
            const float u = rr >= 0 && rr < rows && cc >= 0 && cc < cols
                                ? src[static_cast<std::size_t>(rr * cols + cc)]
                                : 0.0f;
            v = dilate ? std::max(v, u) : std::min(v, u);
          }
        }
        dst[static_cast<std::size_t>(r * cols + c)] = v;
      }
    }
    return dst;
  };
  const auto closed = filter(filter(padded, true), false);
  auto out = in;
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c) out.at(r, c) = closed[static_cast<std::size_t>((r + 1) * cols + c + 1)];
  return out;
}

BlockGrid largest_component(const BlockGrid& in) {
  std::vector<int> label(in.values.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  for (int r = 0; r < in.rows; ++r) {
    for (int c = 0; c < in.cols; ++c) {
      const std::size_t idx = static_cast<std::size_t>(r) * in.cols + c;
      if (in.values[idx] == 0.0f || label[idx] >= 0) continue;
      std::size_t size = 0;
      std::queue<std::pair<int, int>> q;
      q.emplace(r, c);
      label[idx] = next;
      while (!q.empty()) {
        const auto [cr, cc] = q.front();
        q.pop();
        ++size;
        constexpr int kDr[] = {-1, 1, 0, 0};
        constexpr int kDc[] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int nr = cr + kDr[k];
          const int nc = cc + kDc[k];
          if (nr < 0 || nr >= in.rows || nc < 0 || nc >= in.cols) continue;
          const std::size_t nidx = static_cast<std::size_t>(nr) * in.cols + nc;
          if (in.values[nidx] != 0.0f && label[nidx] < 0) {
            label[nidx] = next;
            q.emplace(nr, nc);
          }
        }
      }
      if (size > best_size) {
        best_size = size;
        best_label = next;
      }
      ++next;
    }
  }
  BlockGrid out = in;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (best_label >= 0 && label[i] == best_label) ? 1.0f : 0.0f;
  }
  return out;
}

}  // namespace

BlockGrid BlockGrid::for_image(int height, int width, int block_size, float fill) {
  require_block_fit(height, width, block_size);
  BlockGrid g;
  g.block_size = block_size;
  g.rows = height / block_size;
  g.cols = width / block_size;
  g.values.assign(static_cast<std::size_t>(g.rows) * g.cols, fill);
  return g;
}

Plane BlockGrid::expand(int height, int width) const {
  Plane p(height, width);
  for (int y = 0; y < height; ++y) {
    const int r = std::min(y / block_size, rows - 1);
    for (int x = 0; x < width; ++x) p.at(y, x) = at(r, std::min(x / block_size, cols - 1));
  }
  return p;
}

float encode_orientation(double theta) { return static_cast<float>(wrap_pi(theta) / kPi); }

double decode_orientation(float encoded) { return static_cast<double>(encoded) * kPi; }

float encode_frequency(double f, const ExtractOptions& opts) {
  if (f <= 0.0) return 0.0f;
  return static_cast<float>(std::min(f / opts.frequency_scale, 1.0));
}

OrientationField estimate_orientation(const FingerprintImage& img, int block_size) {
  const int h = img.height();
  const int w = img.width();
  require_block_fit(h, w, block_size);

  cv::Mat1f gx;
  cv::Mat1f gy;
  cv::Sobel(img.pixels.mat(), gx, CV_32F, 1, 0, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
  cv::Sobel(img.pixels.mat(), gy, CV_32F, 0, 1, 3, 1.0, 0.0, cv::BORDER_REPLICATE);

  OrientationField out;
  out.angle = BlockGrid::for_image(h, w, block_size);
  out.coherence = BlockGrid::for_image(h, w, block_size);
  for (int r = 0; r < out.angle.rows; ++r) {
    for (int c = 0; c < out.angle.cols; ++c) {
      double gxx = 0.0;
      double gyy = 0.0;
      double gxy = 0.0;
      for (int y = r * block_size; y < (r + 1) * block_size; ++y) {
        for (int x = c * block_size; x < (c + 1) * block_size; ++x) {
          const double a = gx(y, x);
          const double b = gy(y, x);
          gxx += a * a;
          gyy += b * b;
          gxy += a * b;
        }
      }
      const double energy = gxx + gyy;
      if (energy < 1e-12) continue;  // degenerate block: angle 0, coherence 0
      const double dxx = gxx - gyy;
      const double coherence = std::sqrt(dxx * dxx + 4.0 * gxy * gxy) / energy;
      // Dominant gradient direction in image coordinates (y down), then rotate to
      // the ridge direction and flip to the y-up convention.
      const double gradient_dir = 0.5 * std::atan2(2.0 * gxy, dxx);
      out.angle.at(r, c) = static_cast<float>(wrap_pi(-(gradient_dir + kPi / 2.0)));
      out.coherence.at(r, c) = static_cast<float>(std::clamp(coherence, 0.0, 1.0));
    }
  }
  out.encoded = Plane(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.encoded.at(y, x) = encode_orientation(out.angle.at(y / block_size, x / block_size));
    }
  }
  return out;
}

FrequencyField estimate_frequency(const FingerprintImage& img, const OrientationField& orientation,
                                  const ExtractOptions& opts) {
  const int h = img.height();
  const int w = img.width();
  const int b = orientation.angle.block_size;
  require_block_fit(h, w, b);

  FrequencyField out;
  out.frequency = BlockGrid::for_image(h, w, b);
  // Long enough to hold two full periods at the lowest valid frequency.
  const int length = std::max(2 * b, static_cast<int>(std::ceil(2.0 / opts.min_frequency)) + 2);
  for (int r = 0; r < out.frequency.rows; ++r) {
    for (int c = 0; c < out.frequency.cols; ++c) {
      const double theta = orientation.angle.at(r, c);
      // Ridge direction t and normal n in image coordinates.
      const double tx = std::cos(theta);
      const double ty = -std::sin(theta);
      const double nx = std::sin(theta);
      const double ny = std::cos(theta);
      const double cx = c * b + (b - 1) / 2.0;
      const double cy = r * b + (b - 1) / 2.0;
      std::vector<double> signature;
      signature.reserve(length);
      for (int k = 0; k < length; ++k) {
        const double along_normal = k - (length - 1) / 2.0;
        double sum = 0.0;
        int count = 0;
        for (int d = 0; d < b; ++d) {
          const double along_ridge = d - (b - 1) / 2.0;
          double v = 0.0;
          if (sample(img.pixels, cx + along_normal * nx + along_ridge * tx,
                     cy + along_normal * ny + along_ridge * ty, v)) {
            sum += v;
            ++count;
          }
        }
        if (count * 2 >= b) {
          signature.push_back(sum / count);
        } else if (!signature.empty()) {
          break;  // window left the image; keep the contiguous run
        }
      }
      const double period = signature_period(signature);
      if (period <= 0.0) continue;
      const double f = 1.0 / period;
      if (f < opts.min_frequency || f > opts.max_frequency) continue;
      out.frequency.at(r, c) = static_cast<float>(f);
    }
  }
  out.encoded = Plane(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.encoded.at(y, x) = encode_frequency(out.frequency.at(y / b, x / b), opts);
    }
  }
  return out;
}

Segmentation segment(const FingerprintImage& img, const OrientationField& orientation,
                     const ExtractOptions& opts) {
  const int h = img.height();
  const int w = img.width();
  const int b = orientation.coherence.block_size;
  require_block_fit(h, w, b);

  BlockGrid raw = BlockGrid::for_image(h, w, b);
  for (int r = 0; r < raw.rows; ++r) {
    for (int c = 0; c < raw.cols; ++c) {
      double sum = 0.0;
      double sum_sq = 0.0;
      for (int y = r * b; y < (r + 1) * b; ++y) {
        for (int x = c * b; x < (c + 1) * b; ++x) {
          const double v = img.pixels.at(y, x);
          sum += v;
          sum_sq += v * v;
        }
      }
      const double n = static_cast<double>(b) * b;
      const double mean = sum / n;
      const double variance = std::max(0.0, sum_sq / n - mean * mean);
      const bool fg = variance >= opts.var_threshold &&
                      orientation.coherence.at(r, c) >= opts.coherence_threshold;
      raw.at(r, c) = fg ? 1.0f : 0.0f;
    }
  }
  Segmentation out;
  out.foreground = largest_component(close_blocks(raw));
  out.mask = out.foreground.expand(h, w);
  return out;
}

Segmentation segment(const FingerprintImage& img, int block_size, double var_threshold) {
  ExtractOptions opts;
  opts.block_size = block_size;
  opts.var_threshold = var_threshold;
  return segment(img, estimate_orientation(img, block_size), opts);
}

Plane binarize_ridges(const FingerprintImage& img, const OrientationField& orientation,
                      const FrequencyField& frequency, const Segmentation& segmentation,
                      const ExtractOptions& opts) {
  (void)opts;
  const int h = img.height();
  const int w = img.width();
  const int b = orientation.angle.block_size;
  require_block_fit(h, w, b);

  // Blocks without a valid period borrow the median foreground frequency.
  std::vector<float> valid;
  for (std::size_t i = 0; i < frequency.frequency.values.size(); ++i) {
    if (segmentation.foreground.values[i] > 0.0f && frequency.frequency.values[i] > 0.0f)
      valid.push_back(frequency.frequency.values[i]);
  }
  double fallback = 1.0 / 8.0;
  if (!valid.empty()) {
    std::nth_element(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(valid.size() / 2), valid.end());
    fallback = valid[valid.size() / 2];
  }

  Plane ridge(h, w);
  std::vector<double> response(static_cast<std::size_t>(b) * b);
  std::vector<double> kernel;
  for (int r = 0; r < orientation.angle.rows; ++r) {
    for (int c = 0; c < orientation.angle.cols; ++c) {
      if (segmentation.foreground.at(r, c) == 0.0f) continue;
      double f = frequency.frequency.at(r, c);
      if (f <= 0.0) f = fallback;
      const double theta = orientation.angle.at(r, c);
      const double nx = std::sin(theta);
      const double ny = std::cos(theta);
      const double sigma = 0.65 / f;
      const int radius = static_cast<int>(std::ceil(3.0 * sigma));
      const int side = 2 * radius + 1;
      kernel.assign(static_cast<std::size_t>(side) * side, 0.0);
      double mean = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const double u = dx * nx + dy * ny;
          const double rr = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
          const double g = std::exp(-0.5 * rr / (sigma * sigma)) * std::cos(2.0 * kPi * f * u);
          kernel[static_cast<std::size_t>(dy + radius) * side + (dx + radius)] = g;
          mean += g;
        }
      }
      mean /= static_cast<double>(kernel.size());
      for (double& k : kernel) k -= mean;

      double block_mean = 0.0;
      for (int y = 0; y < b; ++y) {
        for (int x = 0; x < b; ++x) {
          const int py = r * b + y;
          const int px = c * b + x;
          double acc = 0.0;
          for (int dy = -radius; dy <= radius; ++dy) {
            const int sy = std::clamp(py + dy, 0, h - 1);
            const double* krow = &kernel[static_cast<std::size_t>(dy + radius) * side];
            for (int dx = -radius; dx <= radius; ++dx) {
              acc += krow[dx + radius] * img.pixels.at(sy, std::clamp(px + dx, 0, w - 1));
            }
          }
          response[static_cast<std::size_t>(y) * b + x] = acc;
          block_mean += acc;
        }
      }
      block_mean /= static_cast<double>(b) * b;
      for (int y = 0; y < b; ++y) {
        for (int x = 0; x < b; ++x) {
          ridge.at(r * b + y, c * b + x) = response[static_cast<std::size_t>(y) * b + x] < block_mean ? 1.0f : 0.0f;
        }
      }
    }
  }
  return ridge;
}

MapStack make_target_stack(const FingerprintImage& img, const ExtractOptions& opts) {
  const auto orientation = estimate_orientation(img, opts.block_size);
  const auto frequency = estimate_frequency(img, orientation, opts);
  const auto seg = segment(img, orientation, opts);

  MapStack stack;
  stack.ridge() = binarize_ridges(img, orientation, frequency, seg, opts);
  stack.frequency() = frequency.encoded;
  stack.orientation() = orientation.encoded;
  stack.segmentation() = seg.mask;
  auto f = stack.frequency().values();
  auto o = stack.orientation().values();
  const auto s = stack.segmentation().values();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == 0.0f) {
      f[i] = 0.0f;
      o[i] = 0.0f;
    }
  }
  return stack;
}

}  // namespace lfr::mapextract
