#include "imt/image.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "imt/error.hpp"

namespace imt {

Frame::Frame(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

Frame::Frame(int w, int h, std::vector<std::uint8_t> rgb) : width(w), height(h), pixels(std::move(rgb)) {}

void Frame::validate() const {
  if (width < kMinFrameSide || height < kMinFrameSide) {
    fail(ErrorKind::invalid_argument, "frame smaller than 16x16: " + std::to_string(width) + "x" +
                                          std::to_string(height));
  }
  if (width > kMaxFrameWidth || height > kMaxFrameHeight) {
    fail(ErrorKind::invalid_argument, "frame larger than 1920x1080: " + std::to_string(width) + "x" +
                                          std::to_string(height));
  }
  if (pixels.size() != pixel_count() * 3) {
    fail(ErrorKind::invalid_argument, "frame must have exactly 3 channels");
  }
}

Mask::Mask(int w, int h, std::uint8_t fill) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

std::vector<std::uint8_t> Mask::binarized() const {
  std::vector<std::uint8_t> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [t = threshold](std::uint8_t v) { return static_cast<std::uint8_t>(v >= t ? 1 : 0); });
  return out;
}

Mask Mask::binary255() const {
  Mask out(width, height);
  std::transform(values.begin(), values.end(), out.values.begin(),
                 [t = threshold](std::uint8_t v) { return static_cast<std::uint8_t>(v >= t ? 255 : 0); });
  return out;
}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [t = threshold](std::uint8_t v) { return v >= t; }));
}

Mask FloatMap::threshold(float cut) const {
  Mask out(width, height);
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = values[i] >= cut ? 255 : 0;
  return out;
}

void require_same_shape(const Frame& f, const Mask& m, const std::string& what) {
  if (!m.same_shape(f) || m.values.size() != m.pixel_count()) {
    fail(ErrorKind::invalid_argument, what + ": dimension mismatch (frame " + std::to_string(f.width) + "x" +
                                          std::to_string(f.height) + ", mask " + std::to_string(m.width) + "x" +
                                          std::to_string(m.height) + ")");
  }
}

void require_same_shape(const Mask& a, const Mask& b, const std::string& what) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::invalid_argument, what + ": dimension mismatch (" + std::to_string(a.width) + "x" +
                                          std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                          std::to_string(b.height) + ")");
  }
}

Frame resize_bilinear(const Frame& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  cv::Mat in(src.height, src.width, CV_8UC3, const_cast<std::uint8_t*>(src.pixels.data()));
  Frame out(width, height);
  cv::Mat dst(height, width, CV_8UC3, out.pixels.data());
  cv::resize(in, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

FloatMap resize_bilinear(const FloatMap& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  cv::Mat in(src.height, src.width, CV_32FC1, const_cast<float*>(src.values.data()));
  FloatMap out(width, height);
  cv::Mat dst(height, width, CV_32FC1, out.values.data());
  cv::resize(in, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  return out;
}

Mask resize_mask(const Mask& src, int width, int height) {
  FloatMap f(src.width, src.height);
  for (std::size_t i = 0; i < src.values.size(); ++i) f.values[i] = src.values[i] >= src.threshold ? 1.0f : 0.0f;
  return resize_bilinear(f, width, height).threshold(0.5f);
}

Mask translate(const Mask& m, int dx, int dy) {
  Mask out(m.width, m.height);
  out.threshold = m.threshold;
  for (int y = 0; y < m.height; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= m.height) continue;
    for (int x = 0; x < m.width; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= m.width) continue;
      out.at(x, y) = m.at(sx, sy);
    }
  }
  return out;
}

}  // namespace imt
