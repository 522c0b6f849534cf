#include "orefeed/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <string>

#include "orefeed/common.hpp"
#include "orefeed/random.hpp"

namespace orefeed::imaging {

SegmentGeometry SegmentGeometry::desk() {
  SegmentGeometry g;
  g.raw_width = 64;
  g.raw_height = 64;
  g.patch_width = 64;
  g.patch_height = 32;
  g.segment_size = 32;
  g.stride = 16;
  g.count = 3;
  return g;
}

void SegmentGeometry::validate() const {
  if (raw_width <= 0 || raw_height <= 0 || patch_width <= 0 || patch_height <= 0) {
    throw ShapeError("segment geometry: dimensions must be positive");
  }
  if (segment_size <= 0 || stride <= 0 || count <= 0) {
    throw ShapeError("segment geometry: segment size, stride and count must be positive");
  }
  if (segment_size != patch_height) {
    throw ShapeError("segment geometry: segments must span the full patch height");
  }
  if (segment_size + (count - 1) * stride > patch_width) {
    throw ShapeError("segment geometry: segments overrun the patch width");
  }
}

std::vector<int> SegmentGeometry::offsets() const {
  const int covered = segment_size + (count - 1) * stride;
  const int shift = center_remainder ? (patch_width - covered) / 2 : 0;
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = shift + i * stride;
  return out;
}

PatchImage resize_bilinear(const Image8& src, int out_width, int out_height) {
  PatchImage out(3, out_height, out_width);
  const double sx = static_cast<double>(src.width) / out_width;
  const double sy = static_cast<double>(src.height) / out_height;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bot = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        out.at(c, y, x) = ((1 - wy) * top + wy * bot) / 255.0;
      }
    }
  }
  return out;
}

PatchImage downscale(const Image8& raw, const SegmentGeometry& geom) {
  if (raw.width != geom.raw_width || raw.height != geom.raw_height ||
      raw.rgb.size() != static_cast<std::size_t>(raw.width) * raw.height * 3) {
    throw ShapeError("downscale: expected " + std::to_string(geom.raw_width) + "x" +
                     std::to_string(geom.raw_height) + "x3 input, got " +
                     std::to_string(raw.width) + "x" + std::to_string(raw.height));
  }
  return resize_bilinear(raw, geom.patch_width, geom.patch_height);
}

std::vector<Segment> extract_segments(const PatchImage& patch, const SegmentGeometry& geom) {
  if (patch.channels != 3 || patch.width != geom.patch_width ||
      patch.height != geom.patch_height) {
    throw ShapeError("extract_segments: patch shape does not match geometry");
  }
  const int s = geom.segment_size;
  std::vector<Segment> out;
  out.reserve(static_cast<std::size_t>(geom.count));
  for (const int off : geom.offsets()) {
    Segment seg{PlanarImage(3, s, s), off};
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < s; ++y) {
        const double* src = &patch.px[static_cast<std::size_t>(c) * patch.plane() +
                                     static_cast<std::size_t>(y) * patch.width + off];
        std::copy(src, src + s, &seg.pixels.at(c, y, 0));
      }
    }
    out.push_back(std::move(seg));
  }
  return out;
}

AugmentParams draw_augment(std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.flip = static_cast<Flip>(rng.below(3));
  p.brightness = rng.uniform(0.5, 1.0);
  return p;
}

Segment apply_augment(const Segment& seg, const AugmentParams& params) {
  const PlanarImage& in = seg.pixels;
  Segment out{PlanarImage(in.channels, in.height, in.width), seg.offset_x};
  const double factor = params.brightness;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        int sy = y, sx = x;
        if (params.flip == Flip::Horizontal) sx = in.width - 1 - x;
        if (params.flip == Flip::Vertical) sy = in.height - 1 - y;
        out.pixels.at(c, y, x) = std::clamp(in.at(c, sy, sx) * factor, 0.0, 1.0);
      }
    }
  }
  return out;
}

Segment augment(const Segment& seg, std::uint64_t seed) {
  return apply_augment(seg, draw_augment(seed));
}

std::vector<Segment> preprocess(const Image8& raw, const SegmentGeometry& geom) {
  return extract_segments(downscale(raw, geom), geom);
}

Image8 to_image8(const PlanarImage& img) {
  if (img.channels != 3) throw ShapeError("to_image8: need 3 channels");
  Image8 out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = static_cast<std::uint8_t>(
            std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  return out;
}

Image8 read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error("cannot read png " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  Image8 out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error("cannot decode png " + path.string() + ": " + msg);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.rgb.data(), 0, nullptr)) {
    throw Error("cannot write png " + path.string() + ": " + image.message);
  }
}

}  // namespace orefeed::imaging
