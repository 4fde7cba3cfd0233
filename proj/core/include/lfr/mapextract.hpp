#pragma once

#include <vector>

#include "lfr/image.hpp"

// Ground-truth map extraction: orientation, frequency, segmentation and binary
// ridge channels from a clean fingerprint, composed into a MapStack target.
//
// Orientation angles follow the visual convention: theta in [0, pi) is the ridge
// direction measured counter-clockwise from the +x axis with y pointing up, so a
// grating whose rows are constant has theta = 0.
namespace lfr::mapextract {

// Per-block scalars over an (H/b) x (W/b) grid.
struct BlockGrid {
  int block_size = 16;
  int rows = 0;
  int cols = 0;
  std::vector<float> values;

  static BlockGrid for_image(int height, int width, int block_size, float fill = 0.0f);

  float& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  float at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

  // Nearest-neighbour expansion to pixel resolution.
  Plane expand(int height, int width) const;

  bool operator==(const BlockGrid&) const = default;
};

struct ExtractOptions {
  int block_size = 16;
  double var_threshold = 0.01;
  double coherence_threshold = 0.3;
  // Valid ridge frequencies in cycles/px; anything outside is rejected (encoded 0).
  double min_frequency = 1.0 / 25.0;
  double max_frequency = 1.0 / 3.0;
  // Encoded frequency = min(f / frequency_scale, 1).
  double frequency_scale = 0.25;
};

struct OrientationField {
  BlockGrid angle;      // radians in [0, pi)
  BlockGrid coherence;  // [0, 1]
  Plane encoded;        // angle / pi, expanded to pixels
};

struct FrequencyField {
  BlockGrid frequency;  // cycles/px, 0 where no valid period was found
  Plane encoded;
};

struct Segmentation {
  BlockGrid foreground;  // {0, 1}
  Plane mask;            // {0, 1}, 1 = foreground
};

float encode_orientation(double theta);
double decode_orientation(float encoded);
float encode_frequency(double cycles_per_px, const ExtractOptions& opts = {});

// Gradient-covariance orientation per block (averaged doubled-angle vectors).
OrientationField estimate_orientation(const FingerprintImage& img, int block_size = 16);

// x-signature frequency per block: intensities projected onto the ridge normal
// inside a window b wide along the ridge and max(2b, 2/min_frequency + 2) long
// along the normal; period from peak spacing.
FrequencyField estimate_frequency(const FingerprintImage& img, const OrientationField& orientation,
                                  const ExtractOptions& opts = {});

// Block variance + coherence test, closing on the block grid, largest component kept.
Segmentation segment(const FingerprintImage& img, const OrientationField& orientation,
                     const ExtractOptions& opts = {});
Segmentation segment(const FingerprintImage& img, int block_size, double var_threshold);

// Oriented Gabor filtering per block, thresholded at the block mean. Ridges are the
// dark phase of the input; background blocks are forced to 0.
Plane binarize_ridges(const FingerprintImage& img, const OrientationField& orientation,
                      const FrequencyField& frequency, const Segmentation& segmentation,
                      const ExtractOptions& opts = {});

MapStack make_target_stack(const FingerprintImage& img, const ExtractOptions& opts = {});

}  // namespace lfr::mapextract
