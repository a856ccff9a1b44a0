#include <doctest.h>

#include <cmath>
#include <queue>
#include <random>

#include "helpers.hpp"
#include "imt/error.hpp"
#include "imt/segmentation.hpp"
#include "imt/synth.hpp"

using namespace imt;
using testing::rect;
using testing::solid_frame;

namespace {

constexpr Rgb kSkin{220, 170, 140};
constexpr Rgb kGray{128, 128, 128};

/// Paints a filled axis-aligned ellipse and returns how many pixels it covered.
int paint_ellipse(Frame& f, double cx, double cy, double a, double b, Rgb c) {
  int n = 0;
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const double dx = (x - cx) / a, dy = (y - cy) / b;
      if (dx * dx + dy * dy <= 1.0) {
        std::copy(c.begin(), c.end(), f.at(x, y));
        ++n;
      }
    }
  }
  return n;
}

/// 4-connected component sizes by flood fill.
std::vector<int> component_sizes(const Mask& m) {
  std::vector<int> label(m.values.size(), -1), sizes;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      if (!m.on(x, y) || label[y * m.width + x] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      label[y * m.width + x] = id;
      while (!q.empty()) {
        auto [px, py] = q.front();
        q.pop();
        ++sizes[id];
        const int nx[4] = {px + 1, px - 1, px, px}, ny[4] = {py, py, py + 1, py - 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= m.width || ny[k] >= m.height) continue;
          const int idx = ny[k] * m.width + nx[k];
          if (m.on(nx[k], ny[k]) && label[idx] < 0) {
            label[idx] = id;
            q.push({nx[k], ny[k]});
          }
        }
      }
    }
  }
  return sizes;
}

}  // namespace

TEST_SUITE("iou") {
  TEST_CASE("oracle cases") {
    const Mask a = rect(30, 30, 5, 5, 10, 10);
    CHECK(evaluate_iou(a, a) == doctest::Approx(1.0));
    CHECK(evaluate_iou(a, rect(30, 30, 18, 18, 10, 10)) == 0.0);
    CHECK(evaluate_iou(a, rect(30, 30, 10, 5, 10, 10)) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
    CHECK(evaluate_iou(Mask(30, 30), Mask(30, 30)) == 1.0);
    CHECK(evaluate_iou(a, Mask(30, 30)) == 0.0);
    CHECK_THROWS_AS(evaluate_iou(a, Mask(31, 30)), Error);
  }

  TEST_CASE("symmetric, matches a pixel-count oracle") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
      Mask a(20, 20), b(20, 20);
      int inter = 0, uni = 0;
      for (std::size_t i = 0; i < a.values.size(); ++i) {
        a.values[i] = static_cast<std::uint8_t>(rng() % 256);
        b.values[i] = static_cast<std::uint8_t>(rng() % 256);
        const bool x = a.values[i] >= 128, y = b.values[i] >= 128;
        inter += x && y;
        uni += x || y;
      }
      const double expected = uni == 0 ? 1.0 : double(inter) / uni;
      CHECK(evaluate_iou(a, b) == doctest::Approx(expected));
      CHECK(evaluate_iou(a, b) == evaluate_iou(b, a));
    }
  }
}

TEST_SUITE("hand segmentation") {
  TEST_CASE("one skin ellipse on gray is recovered within 5% area") {
    for (auto [a, b] : {std::pair{14.0, 9.0}, std::pair{20.0, 12.0}, std::pair{9.0, 7.0}}) {
      Frame f = solid_frame(96, 80, kGray);
      const int truth = paint_ellipse(f, 45, 38, a, b, kSkin);
      const Mask m = segment_hands(HeuristicHandSegmenter{}, f);
      CHECK(m.same_shape(f));
      CHECK(std::abs(double(m.area()) - truth) <= 0.05 * truth);
    }
  }

  TEST_CASE("all-gray frame gives an empty mask") {
    CHECK(segment_hands(HeuristicHandSegmenter{}, solid_frame(64, 48, kGray)).empty());
  }

  TEST_CASE("keeps the two largest skin blobs") {
    Frame f = solid_frame(120, 80, kGray);
    const int big = paint_ellipse(f, 25, 40, 14, 10, kSkin);
    const int mid = paint_ellipse(f, 70, 40, 10, 8, kSkin);
    const int small = paint_ellipse(f, 105, 15, 5, 4, kSkin);
    const Mask m = segment_hands(HeuristicHandSegmenter{}, f);
    auto sizes = component_sizes(m);
    std::sort(sizes.rbegin(), sizes.rend());
    REQUIRE(sizes.size() == 2);
    CHECK(std::abs(sizes[0] - big) <= 0.05 * big);
    CHECK(std::abs(sizes[1] - mid) <= 0.05 * mid);
    CHECK_FALSE(m.on(105, 15));
    CHECK(small > 0);
  }

  TEST_CASE("missing learned model is an io error") {
    try {
      LearnedHandSegmenter::load("/nonexistent/hand.pt");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}

TEST_SUITE("object segmentation") {
  TEST_CASE("output shape and range on fuzzed inputs") {
    SegModelConfig cfg;
    cfg.resolution = 32;
    const auto model = ObjectSegmenter::create(cfg, 3);
    std::mt19937_64 rng(5);
    for (int t = 0; t < 6; ++t) {
      const int w = 16 + static_cast<int>(rng() % 80), h = 16 + static_cast<int>(rng() % 60);
      const Frame f = testing::noise_frame(w, h, rng);
      Mask hand(w, h);
      for (auto& v : hand.values) v = (rng() % 5 == 0) ? 255 : 0;
      const auto r = segment_object(model, f, hand);
      CHECK(r.probability.width == w);
      CHECK(r.probability.height == h);
      CHECK(r.mask.same_shape(f));
      for (float p : r.probability.values) REQUIRE((p >= 0.0f && p <= 1.0f));
      for (std::size_t i = 0; i < r.mask.values.size(); ++i) {
        REQUIRE((r.mask.values[i] >= 128) == (r.probability.values[i] >= 0.5f));
      }
    }
    CHECK_THROWS_AS(segment_object(model, Frame(20, 20), Mask(21, 20)), Error);
  }

  TEST_CASE("save and load reproduce the output") {
    testing::TempDir dir("seg");
    SegModelConfig cfg;
    cfg.resolution = 32;
    cfg.in_channels = 3;
    const auto model = ObjectSegmenter::create(cfg, 9);
    model.save(dir.path);
    const auto back = ObjectSegmenter::load(dir.path);
    CHECK(back.config().in_channels == 3);
    std::mt19937_64 rng(1);
    const Frame f = testing::noise_frame(40, 40, rng);
    CHECK(model.segment(f, Mask(40, 40)).probability.values == back.segment(f, Mask(40, 40)).probability.values);
  }

  TEST_CASE("training: zero epochs and seeded reproducibility") {
    testing::TempDir dir("segtrain");
    SynthOptions o;
    o.size = 64;
    const auto m = generate_synthetic(36, 4, false, dir.path, o);
    SegTrainConfig cfg;
    cfg.model.resolution = 32;
    cfg.epochs = 0;
    const auto zero = train_object_segmenter(m, cfg);
    CHECK(zero.report.epoch_loss.empty());
    CHECK(zero.report.train_images + zero.report.test_images == 36);
    const auto init = ObjectSegmenter::create(cfg.model, cfg.seed);
    std::mt19937_64 rng(2);
    const Frame f = testing::noise_frame(48, 48, rng);
    CHECK(zero.model.segment(f, Mask(48, 48)).probability.values == init.segment(f, Mask(48, 48)).probability.values);

    cfg.epochs = 2;
    const auto a = train_object_segmenter(m, cfg);
    const auto b = train_object_segmenter(m, cfg);
    CHECK(a.report.epoch_loss.size() == 2);
    CHECK(std::round(a.report.heldout_mean_iou * 1e4) == std::round(b.report.heldout_mean_iou * 1e4));
    CHECK(a.report.epoch_loss == b.report.epoch_loss);
  }
}
