#pragma once

#include <filesystem>

#include "lfr/image.hpp"

namespace lfr::io {

// 8-bit grayscale PNG, intensities mapped linearly between [0,255] and [0,1].
FingerprintImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Plane& plane);

// Map stack blob: 16-byte header then float32 little-endian planes in [R,F,O,S] order.
//   bytes 0..3   magic "LFMS"
//   bytes 4..7   height (uint32 LE)
//   bytes 8..11  width (uint32 LE)
//   bytes 12..15 channel count (uint32 LE, always 4)
void write_stack(const std::filesystem::path& path, const MapStack& stack);
MapStack read_stack(const std::filesystem::path& path);

// Writes <prefix>_ridge.png, <prefix>_frequency.png, ... (8-bit, lossy).
void write_stack_pngs(const std::filesystem::path& prefix, const MapStack& stack);

}  // namespace lfr::io
