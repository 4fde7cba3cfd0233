#pragma once

#include <array>
#include <vector>

#include "lfr/image.hpp"

namespace lfr::match {

// What the internal matcher compares: a ridge image, its orientation field and
// the foreground it is defined on.
struct Template {
  Plane ridge;        // [0, 1]
  Plane orientation;  // radians in [0, pi)
  Plane mask;         // {0, 1}
};

// Ridge channel masked by the binarized segmentation, orientation decoded to radians.
Template make_template(const MapStack& stack, float seg_threshold = 0.5f);

struct MatchOptions {
  int max_shift = 16;
  int shift_step = 4;
  double max_rotation_deg = 15.0;
  double rotation_step_deg = 5.0;
  // A pose counts only when the intersected foreground covers this share of the
  // smaller mask (and at least min_overlap_px pixels).
  double min_overlap_fraction = 0.25;
  int min_overlap_px = 16;
};

struct MatchResult {
  double score = 0.0;  // [-1, 1]
  bool empty_overlap = false;  // no pose had enough foreground in common; score is 0
  int dx = 0;
  int dy = 0;
  double rotation_deg = 0.0;
};

// Gallery side of the search with every rotation resampled once.
class PreparedTemplate {
 public:
  PreparedTemplate(const Template& t, const MatchOptions& opts = {});

  struct Pose {
    double rotation_deg = 0.0;
    Plane ridge;
    Plane cos2;
    Plane sin2;
    Plane mask;
    double area = 0.0;
  };

  const std::vector<Pose>& poses() const { return poses_; }
  const MatchOptions& options() const { return opts_; }
  int height() const { return height_; }
  int width() const { return width_; }

 private:
  MatchOptions opts_;
  int height_ = 0;
  int width_ = 0;
  std::vector<Pose> poses_;
};

// Best pose over the translation and rotation grid of 0.5 * NCC of the ridge images
// on the intersected foreground + 0.5 * mean cos(2 dtheta). Throws ValidationError
// on mismatched resolutions.
MatchResult match_internal(const Template& probe, const PreparedTemplate& gallery);
MatchResult match_internal(const Template& a, const Template& b, const MatchOptions& opts = {});

}  // namespace lfr::match
