#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "imt/bench.hpp"
#include "imt/classifier.hpp"
#include "imt/error.hpp"
#include "imt/saliency.hpp"

using namespace imt;
using testing::rect;

namespace {

struct ToyItem {
  Frame frame;
  Mask object;
  int label;
};

/// Two classes told apart by the colour of a large square; the background is textured gray
/// with a few neutral blobs. `left_only` keeps the square inside the left half.
ToyItem toy_item(int label, std::mt19937_64& rng, bool left_only = false) {
  const int n = 64, side = 26;
  ToyItem it{Frame(n, n), Mask(n, n), label};
  std::uniform_int_distribution<int> jitter(-12, 12);
  for (std::size_t i = 0; i < it.frame.pixel_count(); ++i) {
    const auto g = static_cast<std::uint8_t>(128 + jitter(rng));
    for (int k = 0; k < 3; ++k) it.frame.pixels[3 * i + k] = g;
  }
  std::uniform_int_distribution<int> blob_pos(0, n - 10);
  for (int b = 0; b < 3; ++b) {
    const int bx = blob_pos(rng), by = blob_pos(rng);
    const auto v = static_cast<std::uint8_t>(60 + rng() % 140);
    for (int y = by; y < by + 10; ++y) {
      for (int x = bx; x < bx + 10; ++x) std::fill_n(it.frame.at(x, y), 3, v);
    }
  }
  const int x0 = left_only ? static_cast<int>(rng() % (n / 2 - side + 1)) : static_cast<int>(rng() % (n - side + 1));
  const int y0 = static_cast<int>(rng() % (n - side + 1));
  const Rgb c = label == 0 ? Rgb{210, 40, 40} : Rgb{40, 60, 210};
  for (int y = y0; y < y0 + side; ++y) {
    for (int x = x0; x < x0 + side; ++x) {
      std::copy(c.begin(), c.end(), it.frame.at(x, y));
      it.object.at(x, y) = 255;
    }
  }
  return it;
}

TeachingSet toy_set(int per_class, std::uint64_t seed, bool with_masks) {
  std::mt19937_64 rng(seed);
  TeachingSet set;
  set.categories = {{0, "red", {255, 0, 0}}, {1, "blue", {0, 0, 255}}};
  for (int i = 0; i < 2 * per_class; ++i) {
    ToyItem it = toy_item(i % 2, rng);
    TeachingSample s;
    s.sample_id = "t" + std::to_string(i);
    s.frame = std::make_shared<const Frame>(std::move(it.frame));
    s.category_id = it.label;
    s.condition = with_masks ? Condition::contour : Condition::naive;
    if (with_masks) s.object_mask = std::make_shared<const Mask>(std::move(it.object));
    set.samples.push_back(std::move(s));
  }
  return set;
}

ClsTrainConfig toy_config(bool masks) {
  ClsTrainConfig c;
  c.epochs = 20;
  c.use_masks = masks;
  c.background_suppression_prob = 0.5;
  c.seed = 3;
  return c;
}

/// Masked-trained toy model shared by several cases.
const ClsTrainResult& masked_toy() {
  static const ClsTrainResult r = train_classifier(toy_set(20, 1, true), toy_config(true));
  return r;
}

double l2(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("classifier") {
  TEST_CASE("untrained model is near uniform and normalized") {
    std::vector<Category> cats{{0, "a", {}}, {1, "b", {}}, {2, "c", {}}, {3, "d", {}}};
    const auto model = make_untrained_classifier(cats);
    std::mt19937_64 rng(12);
    std::vector<double> mean(4, 0.0);
    for (int i = 0; i < 100; ++i) {
      const Frame f = testing::noise_frame(32 + static_cast<int>(rng() % 64), 32 + static_cast<int>(rng() % 48), rng);
      const Prediction p = predict(*model, f);
      REQUIRE(p.probabilities.size() == 4);
      const double sum = std::accumulate(p.probabilities.begin(), p.probabilities.end(), 0.0);
      REQUIRE(std::abs(sum - 1.0) < 1e-6);
      for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(p.probabilities[k] - 0.25) <= 0.15);
        mean[k] += p.probabilities[k] / 100.0;
      }
      CHECK(p.top == model->categories[p.top_index].id);
    }
  }

  TEST_CASE("rejects untrainable sets") {
    TeachingSet one = toy_set(3, 1, false);
    one.categories.pop_back();
    std::erase_if(one.samples, [](const TeachingSample& s) { return s.category_id == 1; });
    try {
      train_classifier(one, toy_config(false));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::invalid_argument);
      CHECK(std::string(e.what()).find("need >= 2 categories") != std::string::npos);
    }
    TeachingSet empty_cat = toy_set(3, 1, false);
    empty_cat.categories.push_back({7, "ghost", {}});
    CHECK_THROWS_AS(train_classifier(empty_cat, toy_config(false)), Error);
    ClsTrainConfig bad = toy_config(false);
    bad.background_suppression_prob = 1.5;
    CHECK_THROWS_AS(check_trainable(toy_set(3, 1, false), bad), Error);
  }

  TEST_CASE("training accuracy on the separable toy set") {
    const auto plain = train_classifier(toy_set(20, 1, false), toy_config(false));
    REQUIRE(plain.report.epoch_accuracy.size() == 20);
    CHECK(plain.report.epoch_accuracy.back() >= 0.95);
    CHECK(masked_toy().report.epoch_accuracy.back() >= 0.9);
  }

  TEST_CASE("seeded training is reproducible") {
    const auto a = train_classifier(toy_set(6, 2, true), [] {
      auto c = toy_config(true);
      c.epochs = 3;
      return c;
    }());
    const auto b = train_classifier(toy_set(6, 2, true), [] {
      auto c = toy_config(true);
      c.epochs = 3;
      return c;
    }());
    CHECK(a.report.epoch_loss == b.report.epoch_loss);
    CHECK(a.model->fingerprint == b.model->fingerprint);
  }

  TEST_CASE("held-out predictions and embedding geometry") {
    const auto& model = *masked_toy().model;
    std::mt19937_64 rng(77);
    int correct_a = 0;
    std::vector<std::vector<float>> ea, eb;
    for (int i = 0; i < 40; ++i) {
      const ToyItem a = toy_item(0, rng), b = toy_item(1, rng);
      correct_a += predict(model, a.frame).top == 0;
      ea.push_back(embed(model, a.frame));
      eb.push_back(embed(model, b.frame));
    }
    CHECK(correct_a >= 36);
    REQUIRE(ea.front().size() == 64);
    CHECK(embed(model, toy_item(0, rng).frame).size() == 64);
    double within = 0, between = 0;
    int nw = 0, nb = 0;
    for (std::size_t i = 0; i < ea.size(); ++i) {
      for (std::size_t j = i + 1; j < ea.size(); ++j) {
        within += l2(ea[i], ea[j]) + l2(eb[i], eb[j]);
        nw += 2;
      }
      for (std::size_t j = 0; j < eb.size(); ++j) {
        between += l2(ea[i], eb[j]);
        ++nb;
      }
    }
    CHECK(between / nb > within / nw);
    const Frame f = toy_item(1, rng).frame;
    CHECK(embed(model, f) == embed(model, f));
  }

  TEST_CASE("save and load") {
    testing::TempDir dir("cls");
    const auto& r = masked_toy();
    save_classifier(*r.model, dir.path, &r.report);
    const auto back = load_classifier(dir.path);
    CHECK(back->categories == r.model->categories);
    CHECK(back->fingerprint == r.model->fingerprint);
    std::mt19937_64 rng(5);
    const Frame f = toy_item(0, rng).frame;
    CHECK(predict(*back, f).probabilities == predict(*r.model, f).probabilities);
    CHECK_THROWS_AS(load_classifier(dir.path / "nothing"), Error);
  }
}

TEST_SUITE("saliency") {
  TEST_CASE("normalization rules") {
    CHECK(normalize_saliency(FloatMap(8, 8, 3.0f)).values == std::vector<float>(64, 0.0f));
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
      FloatMap m(10, 7);
      for (auto& v : m.values) v = std::normal_distribution<float>(0, 5)(rng);
      const FloatMap n = normalize_saliency(m);
      CHECK(*std::min_element(n.values.begin(), n.values.end()) == 0.0f);
      CHECK(*std::max_element(n.values.begin(), n.values.end()) == 1.0f);
    }
  }

  TEST_CASE("range on fuzzed frames, default and explicit targets") {
    const auto& model = *masked_toy().model;
    std::mt19937_64 rng(3);
    for (int t = 0; t < 8; ++t) {
      const Frame f = testing::noise_frame(20 + static_cast<int>(rng() % 90), 20 + static_cast<int>(rng() % 70), rng);
      const AssessmentResult a = assess(model, f);
      CHECK(a.target == a.prediction.top);
      CHECK(a.saliency.values.width == f.width);
      for (float v : a.saliency.values.values) REQUIRE((v >= 0.0f && v <= 1.0f));
      const CategoryId other = a.prediction.top == 0 ? 1 : 0;
      const AssessmentResult b = assess(model, f, other);
      CHECK(b.target == other);
      CHECK(b.saliency.target_category == other);
      CHECK(b.prediction.probabilities == a.prediction.probabilities);
    }
    CHECK_THROWS_AS(saliency_map(model, Frame(32, 32), 42), Error);
  }

  TEST_CASE("masked-trained toy model puts most saliency on the object") {
    const auto& model = *masked_toy().model;
    std::mt19937_64 rng(2024);
    double mass = 0.0;
    const int n = 20;
    for (int i = 0; i < n; ++i) {
      const ToyItem it = toy_item(i % 2, rng, /*left_only=*/true);
      mass += saliency_mass_inside(assess(model, it.frame, it.label).saliency, it.object);
    }
    MESSAGE("mean saliency mass inside object: " << mass / n);
    CHECK(mass / n >= 0.6);
  }

  TEST_CASE("randomized head changes the explanation") {
    const auto& model = *masked_toy().model;
    const auto random = with_random_head(model, 99);
    std::mt19937_64 rng(8);
    double diff = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Frame f = toy_item(i % 2, rng).frame;
      const auto a = saliency_map(model, f, 0).values.values;
      const auto b = saliency_map(*random, f, 0).values.values;
      for (std::size_t k = 0; k < a.size(); ++k) diff += std::abs(a[k] - b[k]) / a.size();
    }
    CHECK(diff > 0.0);
  }

  TEST_CASE("explanation iou") {
    const Mask truth = rect(30, 20, 4, 4, 10, 8);
    SaliencyMap ideal;
    ideal.values = FloatMap(30, 20);
    for (std::size_t i = 0; i < truth.values.size(); ++i) ideal.values.values[i] = truth.values[i] / 255.0f;
    for (double th : {0.01, 0.25, 0.5, 0.75, 0.99}) CHECK(explanation_iou(ideal, truth, th) == 1.0);
    SaliencyMap zero;
    zero.values = FloatMap(30, 20);
    CHECK(explanation_iou(zero, truth) == 0.0);
  }

  TEST_CASE("overlay") {
    std::mt19937_64 rng(6);
    const Frame f = testing::noise_frame(24, 18, rng);
    SaliencyMap zero;
    zero.values = FloatMap(24, 18);
    const RgbaImage o = overlay(f, zero);
    for (std::size_t i = 0; i < f.pixel_count(); ++i) {
      for (int k = 0; k < 3; ++k) REQUIRE(o.pixels[4 * i + k] == f.pixels[3 * i + k]);
      REQUIRE(o.pixels[4 * i + 3] == 255);
    }
    SaliencyMap hot;
    hot.values = FloatMap(24, 18, 1.0f);
    const RgbaImage h = overlay(f, hot);
    CHECK(heat_color(1.0f) == Rgb{255, 0, 0});
    for (std::size_t i = 0; i < f.pixel_count(); ++i) {
      REQUIRE(h.pixels[4 * i + 0] == std::lround(0.5 * f.pixels[3 * i + 0] + 0.5 * 255));
      REQUIRE(h.pixels[4 * i + 1] == std::lround(0.5 * f.pixels[3 * i + 1]));
      REQUIRE(h.pixels[4 * i + 2] == std::lround(0.5 * f.pixels[3 * i + 2]));
    }
    const auto& model = *masked_toy().model;
    const auto s = saliency_map(model, f, 1);
    CHECK(overlay(f, s) == overlay(f, saliency_map(model, f, 1)));
  }
}
