#include "imt/saliency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "imt/error.hpp"
#include "imt/segmentation.hpp"
#include "nn/classifier_net.hpp"
#include "nn/torch_util.hpp"

namespace imt {

namespace {
constexpr float kFlatEpsilon = 1e-8f;
}

FloatMap normalize_saliency(FloatMap raw) {
  if (raw.values.empty()) return raw;
  const auto [lo_it, hi_it] = std::minmax_element(raw.values.begin(), raw.values.end());
  const float lo = *lo_it, hi = *hi_it;
  const float range = hi - lo;
  if (!(range > kFlatEpsilon)) {
    std::fill(raw.values.begin(), raw.values.end(), 0.0f);
    return raw;
  }
  for (float& v : raw.values) v = std::clamp((v - lo) / range, 0.0f, 1.0f);
  return raw;
}

SaliencyMap saliency_map(const ClassifierSnapshot& model, const Frame& frame, CategoryId target) {
  if (!model.net) fail(ErrorKind::conflict, "classifier not loaded");
  frame.validate();
  const auto target_index = static_cast<std::int64_t>(model.index_of(target));

  torch::AutoGradMode grad_on(true);
  const torch::Tensor x = nn::classifier_input(frame, model.input_resolution).unsqueeze(0);
  const torch::Tensor feats = model.net->features(x);
  const torch::Tensor logits = model.net->head->forward(ClassifierNet::pool(feats));
  const torch::Tensor grads = torch::autograd::grad({logits[0][target_index]}, {feats}, {}, false, false, true)[0];

  torch::Tensor cam;
  {
    torch::NoGradGuard no_grad;
    if (!grads.defined()) {
      cam = torch::zeros({1, 1, feats.size(2), feats.size(3)});
    } else {
      const torch::Tensor weights = grads.mean({2, 3}, /*keepdim=*/true);  // [1, C, 1, 1]
      cam = torch::relu((weights * feats).sum(1, /*keepdim=*/true));   // [1, 1, h, w]
    }
    cam = torch::upsample_bilinear2d(cam, {frame.height, frame.width}, /*align_corners=*/false);
  }

  SaliencyMap out;
  out.values = normalize_saliency(nn::to_float_map(cam[0][0]));
  out.target_category = target;
  out.model_fingerprint = model.fingerprint;
  return out;
}

AssessmentResult assess(const ClassifierSnapshot& model, const Frame& frame, std::optional<CategoryId> target) {
  const auto t0 = std::chrono::steady_clock::now();
  AssessmentResult r;
  r.prediction = predict(model, frame);
  r.target = target.value_or(r.prediction.top);
  r.saliency = saliency_map(model, frame, r.target);
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double explanation_iou(const SaliencyMap& map, const Mask& truth, double threshold) {
  if (map.values.width != truth.width || map.values.height != truth.height) {
    fail(ErrorKind::invalid_argument, "explanation_iou: dimension mismatch");
  }
  return evaluate_iou(map.values.threshold(static_cast<float>(threshold)), truth);
}

double saliency_mass_inside(const SaliencyMap& map, const Mask& region) {
  if (map.values.width != region.width || map.values.height != region.height) {
    fail(ErrorKind::invalid_argument, "saliency_mass_inside: dimension mismatch");
  }
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < map.values.values.size(); ++i) {
    total += map.values.values[i];
    if (region.values[i] >= region.threshold) inside += map.values.values[i];
  }
  return total > 0.0 ? inside / total : 0.0;
}

Rgb heat_color(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  return {static_cast<std::uint8_t>(std::lround(255.0f * v)), 0,
          static_cast<std::uint8_t>(std::lround(255.0f * (1.0f - v)))};
}

RgbaImage overlay(const Frame& frame, const SaliencyMap& map) {
  if (map.values.width != frame.width || map.values.height != frame.height) {
    fail(ErrorKind::invalid_argument, "overlay: dimension mismatch");
  }
  RgbaImage out;
  out.width = frame.width;
  out.height = frame.height;
  out.pixels.resize(frame.pixel_count() * 4);
  for (std::size_t i = 0; i < frame.pixel_count(); ++i) {
    const float v = std::clamp(map.values.values[i], 0.0f, 1.0f);
    const float alpha = 0.5f * v;
    const Rgb c = heat_color(v);
    for (int ch = 0; ch < 3; ++ch) {
      const float src = frame.pixels[3 * i + static_cast<std::size_t>(ch)];
      out.pixels[4 * i + static_cast<std::size_t>(ch)] =
          static_cast<std::uint8_t>(std::lround((1.0f - alpha) * src + alpha * c[static_cast<std::size_t>(ch)]));
    }
    out.pixels[4 * i + 3] = 255;
  }
  return out;
}

}  // namespace imt
