#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace orefeed::imaging {

// 8-bit RGB, interleaved row-major (y, x, c).
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image8() = default;
  Image8(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t& at(int y, int x, int c) {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Planar float64 image (c, y, x) with values in [0, 1]. Used for both patch images
// and segments.
struct PlanarImage {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<double> px;

  PlanarImage() = default;
  PlanarImage(int c, int h, int w)
      : channels(c), height(h), width(w), px(static_cast<std::size_t>(c) * h * w, 0.0) {}
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) {
    return px[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  double at(int c, int y, int x) const {
    return px[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const PlanarImage&) const = default;
};

using PatchImage = PlanarImage;

struct Segment {
  PlanarImage pixels;
  int offset_x = 0;
};

// Full scale: 1024x400 camera frame -> 573x224 patch -> 7 segments of 224 at stride 56.
struct SegmentGeometry {
  int raw_width = 1024;
  int raw_height = 400;
  int patch_width = 573;
  int patch_height = 224;
  int segment_size = 224;
  int stride = 56;
  int count = 7;
  // Spread the uncovered remainder evenly on both sides instead of dropping it on the right.
  bool center_remainder = false;

  // 64x64 frames -> 64x32 patch -> 3 segments of 32 at stride 16.
  static SegmentGeometry desk();
  std::vector<int> offsets() const;
  void validate() const;
};

PatchImage downscale(const Image8& raw, const SegmentGeometry& geom = {});
// Bilinear resize (half-pixel centers, edge clamp) from 8-bit RGB to planar [0, 1].
PatchImage resize_bilinear(const Image8& src, int out_width, int out_height);

std::vector<Segment> extract_segments(const PatchImage& patch, const SegmentGeometry& geom = {});

enum class Flip { None, Horizontal, Vertical };

struct AugmentParams {
  Flip flip = Flip::None;
  double brightness = 1.0;  // in [0.5, 1]
};

AugmentParams draw_augment(std::uint64_t seed);
Segment apply_augment(const Segment& seg, const AugmentParams& params);
Segment augment(const Segment& seg, std::uint64_t seed);

// Raw frame -> patch -> segments in one call.
std::vector<Segment> preprocess(const Image8& raw, const SegmentGeometry& geom);

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& img);
Image8 to_image8(const PlanarImage& img);

}  // namespace orefeed::imaging
