#include "lfr/io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "lfr/errors.hpp"

namespace lfr::io {

namespace {

constexpr std::array<char, 4> kStackMagic = {'L', 'F', 'M', 'S'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                          static_cast<unsigned char>(v >> 16),
                                          static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(std::endian::native == std::endian::little, "stack blobs assume a little-endian host");

}  // namespace

FingerprintImage read_png(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw IoError("cannot read image " + path.string());
  cv::Mat1f f;
  raw.convertTo(f, CV_32F, 1.0 / 255.0);
  return FingerprintImage{Plane::from_mat(f), std::nullopt};
}

void write_png(const std::filesystem::path& path, const Plane& plane) {
  cv::Mat1b out(plane.height(), plane.width());
  for (int y = 0; y < plane.height(); ++y) {
    for (int x = 0; x < plane.width(); ++x) {
      const float v = std::clamp(plane.at(y, x), 0.0f, 1.0f);
      out(y, x) = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image " + path.string());
}

void write_stack(const std::filesystem::path& path, const MapStack& stack) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kStackMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(stack.height()));
  put_u32(out, static_cast<std::uint32_t>(stack.width()));
  put_u32(out, kMapChannels);
  for (const Plane& p : stack.channels) {
    out.write(reinterpret_cast<const char*>(p.values().data()),
              static_cast<std::streamsize>(p.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

MapStack read_stack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 16> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != 16 || std::memcmp(header.data(), kStackMagic.data(), 4) != 0) {
    throw IoError("not a map stack blob: " + path.string());
  }
  const auto h = get_u32(header.data() + 4);
  const auto w = get_u32(header.data() + 8);
  const auto c = get_u32(header.data() + 12);
  if (c != kMapChannels || h == 0 || w == 0 || h > 1u << 15 || w > 1u << 15) {
    throw IoError("corrupt map stack header: " + path.string());
  }
  MapStack stack = make_stack(static_cast<int>(h), static_cast<int>(w));
  for (Plane& p : stack.channels) {
    const auto bytes = static_cast<std::streamsize>(p.size() * sizeof(float));
    in.read(reinterpret_cast<char*>(p.values().data()), bytes);
    if (in.gcount() != bytes) throw IoError("truncated map stack: " + path.string());
  }
  return stack;
}

void write_stack_pngs(const std::filesystem::path& prefix, const MapStack& stack) {
  for (int c = 0; c < kMapChannels; ++c) {
    auto p = prefix;
    p += "_" + std::string(kMapChannelNames[c]) + ".png";
    write_png(p, stack.channels[c]);
  }
}

}  // namespace lfr::io
