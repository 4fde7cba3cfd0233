#include "lfr/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <opencv2/imgproc.hpp>

#include "lfr/errors.hpp"

namespace lfr::match {

namespace {

constexpr double kPi = std::numbers::pi;

Plane warp(const Plane& src, const cv::Mat& m, int interpolation) {
  cv::Mat1f out;
  cv::warpAffine(src.mat(), out, m, src.mat().size(), interpolation, cv::BORDER_CONSTANT, cv::Scalar(0));
  return Plane::from_mat(out);
}

double mask_area(const Plane& mask) {
  double n = 0.0;
  for (float v : mask.values()) n += v > 0.5f ? 1.0 : 0.0;
  return n;
}

void check(const Template& t, const char* what) {
  const int h = t.ridge.height();
  const int w = t.ridge.width();
  if (t.orientation.height() != h || t.orientation.width() != w || t.mask.height() != h || t.mask.width() != w) {
    throw ValidationError(std::string(what) + " template planes differ in size");
  }
}

}  // namespace

Template make_template(const MapStack& stack, float seg_threshold) {
  Template t;
  const int h = stack.height();
  const int w = stack.width();
  t.ridge = Plane(h, w);
  t.orientation = Plane(h, w);
  t.mask = Plane(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool fg = stack.segmentation().at(y, x) >= seg_threshold;
      t.mask.at(y, x) = fg ? 1.0f : 0.0f;
      t.ridge.at(y, x) = fg ? std::clamp(stack.ridge().at(y, x), 0.0f, 1.0f) : 0.0f;
      t.orientation.at(y, x) = static_cast<float>(std::clamp(stack.orientation().at(y, x), 0.0f, 1.0f) * kPi);
    }
  }
  return t;
}

PreparedTemplate::PreparedTemplate(const Template& t, const MatchOptions& opts)
    : opts_(opts), height_(t.ridge.height()), width_(t.ridge.width()) {
  check(t, "gallery");
  if (opts.shift_step <= 0 || opts.max_shift < 0 || opts.rotation_step_deg <= 0.0 || opts.max_rotation_deg < 0.0) {
    throw ValidationError("match search grid must have positive steps and non-negative ranges");
  }
  Plane c(height_, width_);
  Plane s(height_, width_);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const double th = t.orientation.at(y, x);
      c.at(y, x) = static_cast<float>(std::cos(2.0 * th));
      s.at(y, x) = static_cast<float>(std::sin(2.0 * th));
    }
  }
  const int steps = static_cast<int>(std::floor(opts.max_rotation_deg / opts.rotation_step_deg + 1e-9));
  const cv::Point2f centre(static_cast<float>(width_ - 1) / 2.0f, static_cast<float>(height_ - 1) / 2.0f);
  for (int k = -steps; k <= steps; ++k) {
    Pose p;
    p.rotation_deg = k * opts.rotation_step_deg;
    if (k == 0) {
      p.ridge = t.ridge;
      p.cos2 = c;
      p.sin2 = s;
      p.mask = t.mask;
    } else {
      const cv::Mat m = cv::getRotationMatrix2D(centre, p.rotation_deg, 1.0);
      p.ridge = warp(t.ridge, m, cv::INTER_LINEAR);
      p.mask = warp(t.mask, m, cv::INTER_NEAREST);
      const Plane wc = warp(c, m, cv::INTER_LINEAR);
      const Plane ws = warp(s, m, cv::INTER_LINEAR);
      // Rotating the image turns every ridge by the same angle.
      const double cr = std::cos(2.0 * p.rotation_deg * kPi / 180.0);
      const double sr = std::sin(2.0 * p.rotation_deg * kPi / 180.0);
      p.cos2 = Plane(height_, width_);
      p.sin2 = Plane(height_, width_);
      for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
          const double a = wc.at(y, x);
          const double b = ws.at(y, x);
          const double norm = std::hypot(a, b);
          const double u = norm > 1e-6 ? a / norm : 0.0;
          const double v = norm > 1e-6 ? b / norm : 0.0;
          p.cos2.at(y, x) = static_cast<float>(u * cr - v * sr);
          p.sin2.at(y, x) = static_cast<float>(v * cr + u * sr);
        }
      }
    }
    p.area = mask_area(p.mask);
    poses_.push_back(std::move(p));
  }
}

MatchResult match_internal(const Template& probe, const PreparedTemplate& gallery) {
  check(probe, "probe");
  const int h = probe.ridge.height();
  const int w = probe.ridge.width();
  if (h != gallery.height() || w != gallery.width()) {
    throw ValidationError("match_internal needs equal resolutions, got " + std::to_string(w) + "x" +
                          std::to_string(h) + " and " + std::to_string(gallery.width()) + "x" +
                          std::to_string(gallery.height()));
  }
  const auto& opts = gallery.options();
  std::vector<float> pc(static_cast<std::size_t>(h) * w);
  std::vector<float> ps(pc.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double th = probe.orientation.at(y, x);
      pc[static_cast<std::size_t>(y) * w + x] = static_cast<float>(std::cos(2.0 * th));
      ps[static_cast<std::size_t>(y) * w + x] = static_cast<float>(std::sin(2.0 * th));
    }
  }
  const double probe_area = mask_area(probe.mask);

  MatchResult best;
  best.empty_overlap = true;
  bool found = false;
  for (const auto& pose : gallery.poses()) {
    const double need =
        std::max<double>(opts.min_overlap_px, opts.min_overlap_fraction * std::min(probe_area, pose.area));
    for (int dy = -opts.max_shift; dy <= opts.max_shift; dy += opts.shift_step) {
      for (int dx = -opts.max_shift; dx <= opts.max_shift; dx += opts.shift_step) {
        double n = 0.0, sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0, so = 0.0;
        const int y0 = std::max(0, dy);
        const int y1 = std::min(h, h + dy);
        const int x0 = std::max(0, dx);
        const int x1 = std::min(w, w + dx);
        for (int y = y0; y < y1; ++y) {
          for (int x = x0; x < x1; ++x) {
            // Probe pixel (x, y) against gallery pixel (x - dx, y - dy).
            if (probe.mask.at(y, x) < 0.5f || pose.mask.at(y - dy, x - dx) < 0.5f) continue;
            const double a = probe.ridge.at(y, x);
            const double b = pose.ridge.at(y - dy, x - dx);
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            n += 1.0;
            sa += a;
            sb += b;
            saa += a * a;
            sbb += b * b;
            sab += a * b;
            so += pc[i] * pose.cos2.at(y - dy, x - dx) + ps[i] * pose.sin2.at(y - dy, x - dx);
          }
        }
        if (n < need || n <= 0.0) continue;
        const double va = saa - sa * sa / n;
        const double vb = sbb - sb * sb / n;
        const double cov = sab - sa * sb / n;
        const double ncc = (va > 1e-9 && vb > 1e-9) ? std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0) : 0.0;
        const double score = 0.5 * ncc + 0.5 * std::clamp(so / n, -1.0, 1.0);
        if (!found || score > best.score) {
          found = true;
          best.score = score;
          best.empty_overlap = false;
          best.dx = dx;
          best.dy = dy;
          best.rotation_deg = pose.rotation_deg;
        }
      }
    }
  }
  if (!found) best.score = 0.0;
  return best;
}

MatchResult match_internal(const Template& a, const Template& b, const MatchOptions& opts) {
  return match_internal(a, PreparedTemplate(b, opts));
}

}  // namespace lfr::match
