#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace imt {

inline constexpr int kMinFrameSide = 16;
inline constexpr int kMaxFrameWidth = 1920;
inline constexpr int kMaxFrameHeight = 1080;

/// 8-bit RGB raster, row-major, interleaved channels.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Frame() = default;
  Frame(int w, int h);
  Frame(int w, int h, std::vector<std::uint8_t> rgb);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x); }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }

  /// Throws ErrorKind::invalid_argument when the frame breaks the size/channel contract.
  void validate() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Single-channel region map. 0 is background; values >= threshold count as foreground.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;
  std::uint8_t threshold = 128;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0);

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  bool on(int x, int y) const { return at(x, y) >= threshold; }

  /// {0,1} view of the mask.
  std::vector<std::uint8_t> binarized() const;
  /// Same mask with every value mapped to 0 or 255.
  Mask binary255() const;

  std::size_t area() const;
  bool empty() const { return area() == 0; }

  bool same_shape(const Frame& f) const { return width == f.width && height == f.height; }
  bool same_shape(const Mask& m) const { return width == m.width && height == m.height; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Float raster in row-major order, used for probability and saliency maps.
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  FloatMap() = default;
  FloatMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

  /// Mask with value 255 where v >= cut, else 0.
  Mask threshold(float cut) const;
};

/// RGBA raster produced by overlays.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const RgbaImage&, const RgbaImage&) = default;
};

void require_same_shape(const Frame& f, const Mask& m, const std::string& what);
void require_same_shape(const Mask& a, const Mask& b, const std::string& what);

/// Bilinear resampling. Pixel centers are aligned (half-pixel convention).
Frame resize_bilinear(const Frame& src, int width, int height);
FloatMap resize_bilinear(const FloatMap& src, int width, int height);
/// Mask resize keeps the {0,255} alphabet: values are interpolated then re-thresholded.
Mask resize_mask(const Mask& src, int width, int height);

/// Shifts mask content by (dx, dy); uncovered pixels become background.
Mask translate(const Mask& m, int dx, int dy);

}  // namespace imt
