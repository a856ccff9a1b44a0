#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "imt/image.hpp"
#include "imt/session.hpp"

namespace testing {

inline imt::Frame solid_frame(int w, int h, imt::Rgb c) {
  imt::Frame f(w, h);
  for (std::size_t i = 0; i < f.pixel_count(); ++i) {
    for (int k = 0; k < 3; ++k) f.pixels[3 * i + k] = c[k];
  }
  return f;
}

inline imt::Frame noise_frame(int w, int h, std::mt19937_64& rng) {
  imt::Frame f(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(d(rng));
  return f;
}

inline imt::Mask rect(int w, int h, int x0, int y0, int rw, int rh) {
  imt::Mask m(w, h);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) m.at(x, y) = 255;
  }
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("imt-test-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace testing
