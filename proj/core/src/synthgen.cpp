#include "lfr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "lfr/checksum.hpp"
#include "lfr/errors.hpp"
#include "lfr/io.hpp"
#include "lfr/rng.hpp"

namespace lfr::synth {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kOrientationBins = 16;

double wrap_pi(double t) {
  t = std::fmod(t, kPi);
  return t < 0.0 ? t + kPi : t;
}

double bilinear(const Plane& p, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(p.width() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(p.height() - 1));
  const int x0 = std::min(static_cast<int>(x), p.width() - 2);
  const int y0 = std::min(static_cast<int>(y), p.height() - 2);
  const double fx = x - x0;
  const double fy = y - y0;
  return (1 - fy) * ((1 - fx) * p.at(y0, x0) + fx * p.at(y0, x0 + 1)) +
         fy * ((1 - fx) * p.at(y0 + 1, x0) + fx * p.at(y0 + 1, x0 + 1));
}

// Zero-pole orientation model in the y-up convention.
Plane zero_pole_field(int canvas, const std::vector<SingularPoint>& points, double base_angle) {
  Plane field(canvas, canvas);
  for (int y = 0; y < canvas; ++y) {
    for (int x = 0; x < canvas; ++x) {
      double theta = base_angle;
      for (const auto& sp : points) {
        const double arg = std::atan2(-(y - sp.y), x - sp.x);
        theta += (sp.type == SingularType::kCore ? 0.5 : -0.5) * arg;
      }
      field.at(y, x) = static_cast<float>(wrap_pi(theta));
    }
  }
  return field;
}

cv::Mat1f oriented_gabor(double theta, double period) {
  const double sigma_normal = 0.5 * period;
  const double sigma_along = 0.8 * period;
  const int radius = static_cast<int>(std::ceil(2.0 * period));
  const int side = 2 * radius + 1;
  cv::Mat1f k(side, side);
  const double nx = std::sin(theta);
  const double ny = std::cos(theta);
  const double tx = std::cos(theta);
  const double ty = -std::sin(theta);
  double mean = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double u = dx * nx + dy * ny;
      const double v = dx * tx + dy * ty;
      const double g = std::exp(-0.5 * (u * u / (sigma_normal * sigma_normal) + v * v / (sigma_along * sigma_along))) *
                       std::cos(2.0 * kPi * u / period);
      k(dy + radius, dx + radius) = static_cast<float>(g);
      mean += g;
    }
  }
  k -= static_cast<float>(mean / (side * side));
  return k;
}

Plane grow_ridges(const Plane& orientation, double period, int iterations, Rng& rng) {
  const int n = orientation.height();
  cv::Mat1f state(n, n, 0.0f);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if (rng.bernoulli(0.03)) state(y, x) = rng.bernoulli(0.5) ? 1.0f : -1.0f;

  std::vector<cv::Mat1f> bank;
  for (int b = 0; b < kOrientationBins; ++b) bank.push_back(oriented_gabor(kPi * b / kOrientationBins, period));

  std::vector<cv::Mat1f> responses(kOrientationBins);
  for (int it = 0; it < iterations; ++it) {
    for (int b = 0; b < kOrientationBins; ++b)
      cv::filter2D(state, responses[b], CV_32F, bank[b], cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT);
    cv::Mat1f next(n, n);
    double sum_sq = 0.0;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        const double pos = orientation.at(y, x) / kPi * kOrientationBins;
        const int b0 = static_cast<int>(std::floor(pos)) % kOrientationBins;
        const int b1 = (b0 + 1) % kOrientationBins;
        const double w = pos - std::floor(pos);
        const double v = (1 - w) * responses[b0](y, x) + w * responses[b1](y, x);
        next(y, x) = static_cast<float>(v);
        sum_sq += v * v;
      }
    }
    const double rms = std::sqrt(sum_sq / (static_cast<double>(n) * n)) + 1e-12;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) state(y, x) = static_cast<float>(std::tanh(2.0 * next(y, x) / rms));
  }
  return Plane::from_mat(state);
}

// Smooth displacement field, scaled so the largest displacement equals amplitude.
struct Displacement {
  cv::Mat1f dx;
  cv::Mat1f dy;
};

Displacement smooth_displacement(int h, int w, double amplitude, Rng& rng) {
  Displacement d{cv::Mat1f(h, w, 0.0f), cv::Mat1f(h, w, 0.0f)};
  const int size = std::max(h, w);
  struct Wave {
    double ux, uy, lambda, phase, dir;
  };
  std::vector<Wave> waves;
  for (int k = 0; k < 4; ++k) {
    const double a = rng.uniform(0.0, 2.0 * kPi);
    waves.push_back({std::cos(a), std::sin(a), rng.uniform(0.5, 1.5) * size, rng.uniform(0.0, 2.0 * kPi),
                     rng.uniform(0.0, 2.0 * kPi)});
  }
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double ex = 0.0;
      double ey = 0.0;
      for (const auto& wv : waves) {
        const double s = std::sin(2.0 * kPi * (x * wv.ux + y * wv.uy) / wv.lambda + wv.phase);
        ex += std::cos(wv.dir) * s;
        ey += std::sin(wv.dir) * s;
      }
      d.dx(y, x) = static_cast<float>(ex);
      d.dy(y, x) = static_cast<float>(ey);
      max_mag = std::max(max_mag, std::hypot(ex, ey));
    }
  }
  if (max_mag > 0.0) {
    d.dx *= static_cast<float>(amplitude / max_mag);
    d.dy *= static_cast<float>(amplitude / max_mag);
  }
  return d;
}

float border_median(const Plane& p) {
  std::vector<float> v;
  for (int x = 0; x < p.width(); ++x) {
    v.push_back(p.at(0, x));
    v.push_back(p.at(p.height() - 1, x));
  }
  for (int y = 1; y + 1 < p.height(); ++y) {
    v.push_back(p.at(y, 0));
    v.push_back(p.at(y, p.width() - 1));
  }
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

// A pixel of the impression (non-background), or the image centre if none.
cv::Point2d pick_foreground(const Plane& p, float background, Rng& rng) {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(p.size()); ++i)
    if (std::abs(p.values()[static_cast<std::size_t>(i)] - background) > 0.05f) idx.push_back(i);
  if (idx.empty()) return {p.width() / 2.0, p.height() / 2.0};
  const int i = idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(idx.size()) - 1))];
  return {static_cast<double>(i % p.width()), static_cast<double>(i / p.width())};
}

void apply_occlusions(Plane& img, const DistortionParams& params, float fill, Rng& rng) {
  if (params.occlusion_count == 0 || params.occlusion_area_fraction <= 0.0) return;
  const double target_area =
      params.occlusion_area_fraction * img.height() * img.width() / params.occlusion_count;
  cv::Mat1b mask(img.height(), img.width(), static_cast<unsigned char>(0));
  constexpr int kVertices = 40;
  for (int b = 0; b < params.occlusion_count; ++b) {
    // Pulled halfway to the image centre so large blobs stay mostly on the image.
    const cv::Point2d seed_point = pick_foreground(img, fill, rng);
    const cv::Point2d centre(0.5 * (seed_point.x + img.width() / 2.0), 0.5 * (seed_point.y + img.height() / 2.0));
    const double aspect = rng.uniform(0.6, 1.0);
    const double rot = rng.uniform(0.0, kPi);
    double harm[3];
    double phase[3];
    for (int h = 0; h < 3; ++h) {
      harm[h] = rng.uniform(0.0, 0.12);
      phase[h] = rng.uniform(0.0, 2.0 * kPi);
    }
    // Unit-scale star-shaped outline; scaled about its centre so that larger
    // areas strictly contain smaller ones.
    std::vector<cv::Point2d> unit;
    for (int k = 0; k < kVertices; ++k) {
      const double phi = 2.0 * kPi * k / kVertices;
      double g = 1.0;
      for (int h = 0; h < 3; ++h) g += harm[h] * std::cos((h + 2) * phi + phase[h]);
      const double ux = g * std::cos(phi);
      const double uy = aspect * g * std::sin(phi);
      unit.emplace_back(ux * std::cos(rot) - uy * std::sin(rot), ux * std::sin(rot) + uy * std::cos(rot));
    }
    double unit_area = 0.0;
    for (int k = 0; k < kVertices; ++k) {
      const auto& a = unit[static_cast<std::size_t>(k)];
      const auto& c = unit[static_cast<std::size_t>((k + 1) % kVertices)];
      unit_area += a.x * c.y - c.x * a.y;
    }
    unit_area = std::abs(unit_area) / 2.0;
    const double scale = std::sqrt(target_area / unit_area);
    std::vector<cv::Point> poly;
    for (const auto& u : unit)
      poly.emplace_back(static_cast<int>(std::lround(centre.x + scale * u.x)),
                        static_cast<int>(std::lround(centre.y + scale * u.y)));
    cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(255), cv::LINE_8);
  }
  // Feathered inward so the occluder boundary does not read as a straight ridge.
  cv::Mat1f depth;
  cv::distanceTransform(mask, depth, cv::DIST_L2, cv::DIST_MASK_PRECISE);
  constexpr float kFeather = 6.0f;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const float a = std::min(depth(y, x) / kFeather, 1.0f);
      if (a > 0.0f) img.at(y, x) = (1.0f - a) * img.at(y, x) + a * fill;
    }
  }
}

void apply_bands(Plane& img, const Plane& anchors, const DistortionParams& params, float fill, Rng& rng) {
  const int size = std::max(img.height(), img.width());
  for (int b = 0; b < params.dropout_band_count; ++b) {
    const cv::Point2d through = pick_foreground(anchors, fill, rng);
    const double angle = rng.uniform(0.0, kPi);
    const double half_width = 0.5 * rng.uniform(0.05, 0.12) * size;
    const double strength = rng.uniform(0.7, 1.0);
    const double nx = -std::sin(angle);
    const double ny = std::cos(angle);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const double dist = std::abs((x - through.x) * nx + (y - through.y) * ny);
        const double w = strength * std::clamp(1.0 - (dist - half_width) / 2.0, 0.0, 1.0);
        if (w > 0.0) img.at(y, x) = static_cast<float>(img.at(y, x) + (fill - img.at(y, x)) * w);
      }
    }
  }
}

void apply_texture(Plane& img, BackgroundTexture texture, Rng& rng) {
  if (texture == BackgroundTexture::kNone) return;
  const int h = img.height();
  const int w = img.width();
  const int size = std::max(h, w);
  cv::Mat1f ink(h, w, 1.0f);
  switch (texture) {
    case BackgroundTexture::kLines: {
      const int n = rng.uniform_int(4, 10);
      for (int i = 0; i < n; ++i) {
        const cv::Point a(rng.uniform_int(-size / 4, w + size / 4), rng.uniform_int(-size / 4, h + size / 4));
        const cv::Point b(rng.uniform_int(-size / 4, w + size / 4), rng.uniform_int(-size / 4, h + size / 4));
        const float tone = static_cast<float>(rng.uniform(0.2, 0.6));
        cv::line(ink, a, b, cv::Scalar(tone), rng.uniform_int(1, 2), cv::LINE_8);
      }
      break;
    }
    case BackgroundTexture::kText: {
      const int glyph = std::max(5, size / 12);
      const int rows = rng.uniform_int(2, 4);
      for (int r = 0; r < rows; ++r) {
        const int top = rng.uniform_int(0, std::max(0, h - glyph));
        const float tone = static_cast<float>(rng.uniform(0.2, 0.5));
        for (int left = rng.uniform_int(0, glyph); left + glyph <= w; left += glyph + glyph / 3) {
          if (rng.bernoulli(0.15)) continue;  // word gap
          const int strokes = rng.uniform_int(2, 3);
          for (int s = 0; s < strokes; ++s) {
            const cv::Point a(left + rng.uniform_int(0, glyph - 1), top + rng.uniform_int(0, glyph - 1));
            const cv::Point b(left + rng.uniform_int(0, glyph - 1), top + rng.uniform_int(0, glyph - 1));
            cv::line(ink, a, b, cv::Scalar(tone), 1, cv::LINE_8);
          }
        }
      }
      break;
    }
    case BackgroundTexture::kSpeckle: {
      const int n = h * w / 30;
      for (int i = 0; i < n; ++i) {
        const cv::Point c(rng.uniform_int(0, w - 1), rng.uniform_int(0, h - 1));
        const float tone = static_cast<float>(rng.uniform(0.1, 0.6));
        cv::circle(ink, c, rng.uniform_int(0, 1), cv::Scalar(tone), cv::FILLED, cv::LINE_8);
      }
      break;
    }
    case BackgroundTexture::kNone:
      break;
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img.at(y, x) = std::min(img.at(y, x), ink(y, x));
}

}  // namespace

MasterPrint make_master(int finger_id, std::uint64_t seed, const SynthOptions& opts) {
  if (opts.image_size <= 0) throw ValidationError("image_size must be positive");
  if (!(opts.min_period > 0.0 && opts.min_period <= opts.max_period))
    throw ValidationError("invalid ridge period range");
  MasterPrint m;
  m.finger_id = finger_id;
  m.seed = derive_seed(seed, {0x6d617374ULL, static_cast<std::uint64_t>(finger_id)});
  Rng rng(m.seed);

  const double s = opts.image_size;
  const int canvas = static_cast<int>(std::ceil(1.5 * s));
  const double c = canvas / 2.0;

  const double kind = rng.uniform();
  const double core_x = c + rng.uniform(-0.1, 0.1) * s;
  const double core_y = c + rng.uniform(-0.2, 0.05) * s;
  if (kind < 0.6) {  // loop
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    m.singular_points.push_back({core_x, core_y, SingularType::kCore});
    m.singular_points.push_back(
        {core_x + side * rng.uniform(0.2, 0.35) * s, core_y + rng.uniform(0.3, 0.45) * s, SingularType::kDelta});
  } else if (kind < 0.85) {  // whorl
    const double sep = rng.uniform(0.06, 0.12) * s;
    m.singular_points.push_back({core_x, core_y - sep / 2, SingularType::kCore});
    m.singular_points.push_back({core_x + rng.uniform(-0.04, 0.04) * s, core_y + sep / 2, SingularType::kCore});
    m.singular_points.push_back(
        {core_x - rng.uniform(0.3, 0.4) * s, core_y + rng.uniform(0.3, 0.45) * s, SingularType::kDelta});
    m.singular_points.push_back(
        {core_x + rng.uniform(0.3, 0.4) * s, core_y + rng.uniform(0.3, 0.45) * s, SingularType::kDelta});
  } else {  // tented arch
    m.singular_points.push_back({core_x, core_y, SingularType::kCore});
    m.singular_points.push_back(
        {core_x + rng.uniform(-0.03, 0.03) * s, core_y + rng.uniform(0.2, 0.3) * s, SingularType::kDelta});
  }
  m.orientation_field = zero_pole_field(canvas, m.singular_points, rng.uniform(-0.2, 0.2));

  const double period = rng.uniform(opts.min_period, opts.max_period);
  m.base_frequency = 1.0 / period;
  m.ridge_pattern = grow_ridges(m.orientation_field, period, opts.gabor_iterations, rng);

  m.footprint_cx = c + rng.uniform(-0.05, 0.05) * s;
  m.footprint_cy = c + rng.uniform(-0.05, 0.05) * s;
  m.footprint_rx = rng.uniform(0.36, 0.46) * s;
  m.footprint_ry = rng.uniform(0.44, 0.56) * s;
  return m;
}

FingerprintImage render_impression(const MasterPrint& master, int impression_index, const SynthOptions& opts) {
  Rng rng(derive_seed(master.seed, {0x696d7072ULL, static_cast<std::uint64_t>(impression_index)}));
  const int size = opts.image_size;
  const double rot = rng.uniform(-opts.max_rotation_deg, opts.max_rotation_deg) * kPi / 180.0;
  const double tx = rng.uniform(-opts.max_translation_px, opts.max_translation_px);
  const double ty = rng.uniform(-opts.max_translation_px, opts.max_translation_px);
  const double pressure = rng.uniform(-0.15, 0.15);
  const Displacement warp = smooth_displacement(size, size, opts.impression_warp_px, rng);

  const double canvas_c = master.ridge_pattern.width() / 2.0;
  const double img_c = size / 2.0;
  const double cr = std::cos(rot);
  const double sr = std::sin(rot);
  Rng grain(derive_seed(master.seed, {static_cast<std::uint64_t>(impression_index), 0x70617065}));
  Plane out(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5 - img_c + warp.dx(y, x);
      const double py = y + 0.5 - img_c + warp.dy(y, x);
      // Counter-clockwise (visual) rotation of the finger; y points down.
      const double qx = canvas_c + cr * px + sr * py + tx;
      const double qy = canvas_c - sr * px + cr * py + ty;
      const double ex = (qx - master.footprint_cx) / master.footprint_rx;
      const double ey = (qy - master.footprint_cy) / master.footprint_ry;
      const double e = std::sqrt(ex * ex + ey * ey);
      const double inside = std::clamp((1.0 - e) * master.footprint_rx / 2.0, 0.0, 1.0);
      const double ridge = bilinear(master.ridge_pattern, qx, qy);
      const double tone = 0.5 - 0.38 * std::tanh(2.5 * (ridge + pressure));
      const double paper = 0.97 + 0.01 * grain.normal();
      out.at(y, x) = static_cast<float>(std::clamp(paper * (1.0 - inside) + tone * inside, 0.0, 1.0));
    }
  }
  return FingerprintImage{std::move(out), std::nullopt};
}

CleanPrint synth_clean(int finger_id, std::uint64_t seed, const SynthOptions& opts) {
  CleanPrint cp;
  cp.master = make_master(finger_id, seed, opts);
  cp.image = render_impression(cp.master, 0, opts);
  return cp;
}

std::string to_string(BackgroundTexture t) {
  switch (t) {
    case BackgroundTexture::kNone: return "none";
    case BackgroundTexture::kLines: return "lines";
    case BackgroundTexture::kText: return "text";
    case BackgroundTexture::kSpeckle: return "speckle";
  }
  return "none";
}

BackgroundTexture texture_from_string(const std::string& s) {
  if (s == "none") return BackgroundTexture::kNone;
  if (s == "lines") return BackgroundTexture::kLines;
  if (s == "text") return BackgroundTexture::kText;
  if (s == "speckle") return BackgroundTexture::kSpeckle;
  throw ValidationError("unknown background texture '" + s + "'");
}

void validate(const DistortionParams& p) {
  auto check = [](bool ok, const char* field) {
    if (!ok) throw ValidationError(std::string("distortion parameter out of range: ") + field);
  };
  check(p.occlusion_count >= 0 && p.occlusion_count <= 8, "occlusion_count");
  check(p.occlusion_area_fraction >= 0.0 && p.occlusion_area_fraction <= 0.6, "occlusion_area_fraction");
  check(p.noise_std >= 0.0 && p.noise_std <= 0.3, "noise_std");
  check(p.contrast_gamma >= 0.4 && p.contrast_gamma <= 2.5, "contrast_gamma");
  check(p.dropout_band_count >= 0 && p.dropout_band_count <= 4, "dropout_band_count");
  check(p.elastic_warp_amplitude >= 0.0 && p.elastic_warp_amplitude <= 6.0, "elastic_warp_amplitude");
}

DistortionParams sample_distortion(std::uint64_t seed) {
  Rng rng(seed);
  DistortionParams p;
  p.occlusion_count = rng.uniform_int(0, 4);
  p.occlusion_area_fraction = p.occlusion_count > 0 ? rng.uniform(0.05, 0.45) : 0.0;
  p.background_texture = static_cast<BackgroundTexture>(rng.uniform_int(0, 3));
  p.noise_std = rng.uniform(0.0, 0.2);
  p.contrast_gamma = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  p.dropout_band_count = rng.uniform_int(0, 3);
  p.elastic_warp_amplitude = rng.uniform(0.0, 4.0);
  p.seed = derive_seed(seed, {0x64697374ULL});
  return p;
}

LatentSample distort(const FingerprintImage& clean, const DistortionParams& params, const SourceRef& source) {
  validate(params);
  auto stage_rng = [&](std::uint64_t stage) { return Rng(derive_seed(params.seed, {stage})); };
  Rng rng = stage_rng(1);
  Plane img = clean.pixels;

  if (params.elastic_warp_amplitude > 0.0) {
    const Displacement d = smooth_displacement(img.height(), img.width(), params.elastic_warp_amplitude, rng);
    cv::Mat1f map_x(img.height(), img.width());
    cv::Mat1f map_y(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        map_x(y, x) = static_cast<float>(x) + d.dx(y, x);
        map_y(y, x) = static_cast<float>(y) + d.dy(y, x);
      }
    }
    cv::Mat1f warped;
    cv::remap(clean.pixels.mat(), warped, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    img = Plane::from_mat(warped);
  }
  if (params.contrast_gamma != 1.0) {
    for (float& v : img.values()) v = static_cast<float>(std::pow(std::clamp(v, 0.0f, 1.0f), params.contrast_gamma));
  }
  const float fill = border_median(img);
  const Plane anchors = img;
  Rng occlusion_rng = stage_rng(2);
  Rng band_rng = stage_rng(3);
  Rng texture_rng = stage_rng(4);
  Rng noise_rng = stage_rng(5);
  apply_occlusions(img, params, fill, occlusion_rng);
  apply_bands(img, anchors, params, fill, band_rng);
  apply_texture(img, params.background_texture, texture_rng);
  if (params.noise_std > 0.0) {
    for (float& v : img.values()) v = static_cast<float>(v + params.noise_std * noise_rng.normal());
  }
  for (float& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);

  LatentSample out;
  out.image = FingerprintImage{std::move(img), clean.dpi_hint};
  out.finger_id = source.finger_id;
  out.impression_index = source.impression_index;
  out.params = params;
  out.clean_ref = source.clean_ref;
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValidationError("unknown split '" + s + "'");
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == split) out.push_back(i);
  return out;
}

int DatasetManifest::impression_index(std::size_t record) const {
  const auto& target = records.at(record);
  std::vector<std::string> seen;
  for (const auto& r : records) {
    if (r.finger_id != target.finger_id) continue;
    if (std::find(seen.begin(), seen.end(), r.clean) == seen.end()) seen.push_back(r.clean);
    if (r.clean == target.clean) break;
  }
  return static_cast<int>(std::find(seen.begin(), seen.end(), target.clean) - seen.begin());
}

void write_manifest(const fs::path& csv, const DatasetManifest& manifest) {
  std::ofstream out(csv, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + csv.string());
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.records)
    out << r.latent << ',' << r.clean << ',' << r.stack << ',' << r.finger_id << ',' << to_string(r.split) << '\n';
  if (!out) throw IoError("short write to " + csv.string());
}

DatasetManifest read_manifest(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open manifest " + csv.string());
  DatasetManifest m;
  m.root = csv.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw ValidationError("manifest header must be '" + std::string(kManifestHeader) + "'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ValidationError("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    ManifestRecord r;
    r.latent = cells[0];
    r.clean = cells[1];
    r.stack = cells[2];
    try {
      r.finger_id = std::stoi(cells[3]);
    } catch (const std::exception&) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": bad finger_id");
    }
    r.split = split_from_string(cells[4]);
    m.records.push_back(std::move(r));
  }
  const fs::path meta = m.root / "dataset.json";
  if (fs::exists(meta)) {
    std::ifstream mj(meta);
    const auto j = nlohmann::json::parse(mj, nullptr, false);
    if (!j.is_discarded() && j.contains("global_seed")) m.global_seed = j["global_seed"].get<std::uint64_t>();
  }
  return m;
}

void check_subject_disjoint(const DatasetManifest& manifest) {
  std::map<int, Split> owner;
  for (const auto& r : manifest.records) {
    auto [it, inserted] = owner.emplace(r.finger_id, r.split);
    if (!inserted && it->second != r.split)
      throw ValidationError("finger " + std::to_string(r.finger_id) + " appears in more than one split");
  }
}

namespace {

std::string record_name(const char* fmt, int a, int b, int c = -1) {
  char buf[64];
  if (c < 0)
    std::snprintf(buf, sizeof buf, fmt, a, b);
  else
    std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

nlohmann::json params_json(const DistortionParams& p) {
  return {{"occlusion_count", p.occlusion_count},
          {"occlusion_area_fraction", p.occlusion_area_fraction},
          {"background_texture", to_string(p.background_texture)},
          {"noise_std", p.noise_std},
          {"contrast_gamma", p.contrast_gamma},
          {"dropout_band_count", p.dropout_band_count},
          {"elastic_warp_amplitude", p.elastic_warp_amplitude},
          {"seed", p.seed}};
}

}  // namespace

DatasetManifest build_dataset(const fs::path& root, const DatasetOptions& opts) {
  if (opts.n_fingers <= 0 || opts.impressions_per_finger <= 0 || opts.latents_per_impression <= 0)
    throw ValidationError("dataset counts must be positive");
  double total = 0.0;
  for (double f : opts.split_fractions) {
    if (f < 0.0) throw ValidationError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  if (fs::exists(root)) throw IoError("dataset root already exists: " + root.string());

  // Subject-disjoint split assignment from a seeded permutation of finger ids.
  std::vector<int> order(static_cast<std::size_t>(opts.n_fingers));
  for (int i = 0; i < opts.n_fingers; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(derive_seed(opts.global_seed, {0x73706c74ULL}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<int>(i) - 1))]);
  const int n_train = static_cast<int>(std::lround(opts.n_fingers * opts.split_fractions[0]));
  const int n_val = std::min(opts.n_fingers - n_train,
                             static_cast<int>(std::lround(opts.n_fingers * opts.split_fractions[1])));
  std::vector<Split> split_of(static_cast<std::size_t>(opts.n_fingers));
  for (int i = 0; i < opts.n_fingers; ++i) {
    const int pos = static_cast<int>(std::find(order.begin(), order.end(), i) - order.begin());
    split_of[static_cast<std::size_t>(i)] =
        pos < n_train ? Split::kTrain : (pos < n_train + n_val ? Split::kVal : Split::kTest);
  }

  fs::path staging = root;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);

  DatasetManifest manifest;
  manifest.root = root;
  manifest.global_seed = opts.global_seed;
  try {
    for (const char* sub : {"clean", "latent", "stacks"}) fs::create_directories(staging / sub);
    std::ofstream params_out(staging / "latent_params.jsonl", std::ios::binary);
    if (!params_out) throw IoError("cannot write latent_params.jsonl");

    for (int f = 0; f < opts.n_fingers; ++f) {
      const MasterPrint master = make_master(f, opts.global_seed, opts.synth);
      for (int imp = 0; imp < opts.impressions_per_finger; ++imp) {
        const FingerprintImage clean = render_impression(master, imp, opts.synth);
        const std::string clean_rel = record_name("clean/f%04d_i%02d.png", f, imp);
        const std::string stack_rel = record_name("stacks/f%04d_i%02d.stack", f, imp);
        io::write_png(staging / clean_rel, clean.pixels);
        // Targets come from the clean print, quantised exactly as stored on disk.
        const FingerprintImage stored = io::read_png(staging / clean_rel);
        io::write_stack(staging / stack_rel, mapextract::make_target_stack(stored, opts.extract));

        for (int k = 0; k < opts.latents_per_impression; ++k) {
          const std::uint64_t seed = derive_seed(
              opts.global_seed, {0x6c617465ULL, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(imp),
                                 static_cast<std::uint64_t>(k)});
          const DistortionParams params = sample_distortion(seed);
          const LatentSample latent = distort(stored, params, {f, imp, clean_rel});
          const std::string latent_rel = record_name("latent/f%04d_i%02d_l%03d.png", f, imp, k);
          io::write_png(staging / latent_rel, latent.image.pixels);
          params_out << nlohmann::json{{"latent", latent_rel}, {"params", params_json(params)}}.dump() << '\n';
          manifest.records.push_back({latent_rel, clean_rel, stack_rel, f, split_of[static_cast<std::size_t>(f)]});
        }
      }
    }
    if (!params_out) throw IoError("short write to latent_params.jsonl");
    params_out.close();
    write_manifest(staging / "manifest.csv", manifest);

    nlohmann::json meta = {
        {"global_seed", opts.global_seed},
        {"n_fingers", opts.n_fingers},
        {"impressions_per_finger", opts.impressions_per_finger},
        {"latents_per_impression", opts.latents_per_impression},
        {"split_fractions", opts.split_fractions},
        {"image_size", opts.synth.image_size},
        {"ridge_period", {opts.synth.min_period, opts.synth.max_period}},
        {"block_size", opts.extract.block_size},
        {"var_threshold", opts.extract.var_threshold}};
    std::ofstream meta_out(staging / "dataset.json", std::ios::binary);
    meta_out << meta.dump(2) << '\n';
    if (!meta_out) throw IoError("cannot write dataset.json");
    meta_out.close();

    if (root.has_parent_path()) fs::create_directories(root.parent_path());
    fs::rename(staging, root);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    throw IoError(std::string("dataset build failed: ") + e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
  return manifest;
}

std::string dataset_checksum(const DatasetManifest& manifest) {
  std::string acc;
  std::set<std::string> seen;
  auto add = [&](const std::string& rel) {
    if (!seen.insert(rel).second) return;
    acc += rel + ":" + sha256_file(manifest.resolve(rel)) + "\n";
  };
  add("manifest.csv");
  for (const auto& r : manifest.records) {
    add(r.clean);
    add(r.stack);
    add(r.latent);
  }
  return sha256_hex(acc);
}

}  // namespace lfr::synth
