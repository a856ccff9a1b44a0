#pragma once

#include <optional>
#include <string>
#include <vector>

#include "imt/classifier.hpp"
#include "imt/image.hpp"

namespace imt {

struct SaliencyMap {
  FloatMap values;  // frame resolution, [0,1]
  CategoryId target_category = 0;
  std::string model_fingerprint;
};

struct AssessmentResult {
  Prediction prediction;
  CategoryId target = 0;
  SaliencyMap saliency;
  double latency_ms = 0.0;
};

/// Per-frame min-max normalization; a constant map (range below epsilon) becomes all zeros.
FloatMap normalize_saliency(FloatMap raw);

/// Gradient-weighted class activation over the last conv feature map: channel weights are
/// spatially averaged gradients of the target logit, the weighted feature sum is rectified,
/// bilinearly upsampled to the frame and min-max normalized.
SaliencyMap saliency_map(const ClassifierSnapshot& model, const Frame& frame, CategoryId target);

/// predict + saliency_map; the target defaults to the top-confidence category.
AssessmentResult assess(const ClassifierSnapshot& model, const Frame& frame,
                        std::optional<CategoryId> target = std::nullopt);

/// Binarizes the map at `threshold`, then IoU against the truth mask.
double explanation_iou(const SaliencyMap& map, const Mask& truth, double threshold = 0.5);

/// Fraction of total saliency mass that falls inside the mask.
double saliency_mass_inside(const SaliencyMap& map, const Mask& region);

/// Blue-to-red colormap at value v in [0,1].
Rgb heat_color(float v);

/// Alpha-blends the heat colormap over the frame with alpha = 0.5 * value. Output alpha is opaque.
RgbaImage overlay(const Frame& frame, const SaliencyMap& map);

}  // namespace imt
