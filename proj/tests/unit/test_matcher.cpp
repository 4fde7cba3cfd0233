#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "lfr/errors.hpp"
#include "lfr/mapextract.hpp"
#include "lfr/matcher.hpp"
#include "lfr/synthgen.hpp"

using namespace lfr;
using namespace lfr::match;

namespace {

// Grating centred on the image inside a disc, ridge direction theta (deg, ccw, y up).
Template disc_grating(int size, double period, double theta_deg, double radius) {
  const double t = theta_deg * std::numbers::pi / 180.0;
  const double c = (size - 1) / 2.0;
  Template out{Plane(size, size), Plane(size, size), Plane(size, size)};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool in = std::hypot(x - c, y - c) <= radius;
      const double u = (x - c) * std::sin(t) + (y - c) * std::cos(t);
      out.mask.at(y, x) = in ? 1.0f : 0.0f;
      out.ridge.at(y, x) = in ? static_cast<float>(0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * u / period)) : 0.0f;
      out.orientation.at(y, x) = static_cast<float>(std::fmod(t + std::numbers::pi, std::numbers::pi));
    }
  }
  return out;
}

Template shifted(const Template& t, int dx, int dy) {
  Template out{Plane(t.ridge.height(), t.ridge.width()), Plane(t.ridge.height(), t.ridge.width()),
               Plane(t.ridge.height(), t.ridge.width())};
  for (int y = 0; y < t.ridge.height(); ++y) {
    for (int x = 0; x < t.ridge.width(); ++x) {
      const int sx = x - dx;
      const int sy = y - dy;
      if (sx < 0 || sy < 0 || sx >= t.ridge.width() || sy >= t.ridge.height()) continue;
      out.ridge.at(y, x) = t.ridge.at(sy, sx);
      out.orientation.at(y, x) = t.orientation.at(sy, sx);
      out.mask.at(y, x) = t.mask.at(sy, sx);
    }
  }
  return out;
}

synth::SynthOptions desk() {
  synth::SynthOptions o;
  o.image_size = 64;
  o.min_period = 4.5;
  o.max_period = 6.5;
  return o;
}

mapextract::ExtractOptions desk_extract() {
  mapextract::ExtractOptions o;
  o.block_size = 8;
  return o;
}

Template print_template(int finger, int impression) {
  const auto master = synth::make_master(finger, 77, desk());
  const auto img = synth::render_impression(master, impression, desk());
  return make_template(mapextract::make_target_stack(img, desk_extract()));
}

}  // namespace

TEST(MatchInternal, SelfMatchIsOne) {
  for (int f = 0; f < 4; ++f) {
    const auto t = print_template(f, 0);
    const auto r = match_internal(t, t);
    EXPECT_NEAR(r.score, 1.0, 0.02) << "finger " << f;
    EXPECT_FALSE(r.empty_overlap);
    EXPECT_EQ(r.dx, 0);
    EXPECT_EQ(r.dy, 0);
    EXPECT_EQ(r.rotation_deg, 0.0);
  }
}

TEST(MatchInternal, RecoversTranslation) {
  const auto a = print_template(1, 0);
  const auto b = shifted(a, 8, 0);
  const auto r = match_internal(a, b);
  EXPECT_GT(r.score, 0.9);
  EXPECT_EQ(r.dx, -8);
  EXPECT_EQ(r.dy, 0);

  const auto g = disc_grating(64, 6.0, 20.0, 22.0);
  const auto r2 = match_internal(g, shifted(g, 0, -8));
  EXPECT_GT(r2.score, 0.9);
}

TEST(MatchInternal, RecoversRotationWithOrientationConvention) {
  // b is a rotated 10 degrees counter-clockwise; aligning it back needs -10.
  const auto a = disc_grating(64, 7.0, 30.0, 26.0);
  const auto b = disc_grating(64, 7.0, 40.0, 26.0);
  const auto r = match_internal(a, b);
  EXPECT_EQ(r.rotation_deg, -10.0);
  EXPECT_GT(r.score, 0.9);
}

TEST(MatchInternal, OrthogonalOrientationScoresLow) {
  const auto a = disc_grating(64, 7.0, 0.0, 26.0);
  const auto b = disc_grating(64, 7.0, 90.0, 26.0);
  EXPECT_LT(match_internal(a, b).score, 0.2);
}

TEST(MatchInternal, EmptyOverlapIsZeroAndFlagged) {
  auto a = print_template(2, 0);
  auto b = a;
  for (auto& v : b.mask.values()) v = 0.0f;
  const auto r = match_internal(a, b);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_TRUE(r.empty_overlap);

  // Disjoint discs far apart also leave nothing in common.
  const auto left = shifted(disc_grating(64, 6.0, 0.0, 8.0), -22, 0);
  const auto right = shifted(disc_grating(64, 6.0, 0.0, 8.0), 22, 0);
  const auto r2 = match_internal(left, right);
  EXPECT_TRUE(r2.empty_overlap);
  EXPECT_EQ(r2.score, 0.0);
}

TEST(MatchInternal, ScoreStaysInRange) {
  for (int f = 0; f < 6; ++f) {
    const auto r = match_internal(print_template(f, 0), print_template(f + 10, 1));
    EXPECT_GE(r.score, -1.0);
    EXPECT_LE(r.score, 1.0);
  }
}

TEST(MatchInternal, ResolutionMismatchIsValidationError) {
  const auto a = disc_grating(64, 6.0, 0.0, 20.0);
  const auto b = disc_grating(48, 6.0, 0.0, 20.0);
  EXPECT_THROW(match_internal(a, b), ValidationError);
}

TEST(MatchInternal, ImpostorsScoreBelowGenuines) {
  double genuine = 0.0;
  double impostor = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto a = print_template(i, 0);
    genuine += match_internal(a, print_template(i, 1)).score;
    impostor += match_internal(a, print_template(i + 20, 1)).score;
  }
  EXPECT_LT(impostor / 20.0, genuine / 20.0);
}

TEST(MakeTemplate, MasksRidgeAndDecodesAngles) {
  MapStack s;
  for (auto& c : s.channels) c = Plane(4, 4, 0.0f);
  s.ridge() = Plane(4, 4, 1.0f);
  s.orientation() = Plane(4, 4, 0.5f);
  s.segmentation().at(1, 1) = 0.6f;
  s.segmentation().at(2, 2) = 0.4f;
  const auto t = make_template(s);
  EXPECT_EQ(t.mask.at(1, 1), 1.0f);
  EXPECT_EQ(t.mask.at(2, 2), 0.0f);
  EXPECT_EQ(t.ridge.at(1, 1), 1.0f);
  EXPECT_EQ(t.ridge.at(2, 2), 0.0f);
  EXPECT_NEAR(t.orientation.at(0, 0), std::numbers::pi / 2.0, 1e-6);
}
