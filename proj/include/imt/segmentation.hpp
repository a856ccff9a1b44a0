#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "imt/dataset.hpp"
#include "imt/image.hpp"

namespace imt {

/// |pred ∩ truth| / |pred ∪ truth| over binarized masks; 1.0 when both are empty.
double evaluate_iou(const Mask& pred, const Mask& truth);

// ---------------------------------------------------------------------------
// Hand segmentation

class HandSegmenter {
 public:
  virtual ~HandSegmenter() = default;
  /// Output mask is aligned to the input frame.
  virtual Mask segment(const Frame& frame) const = 0;
  virtual std::string name() const = 0;
};

/// Skin-colour box filter in HSV, morphological close, keep the K largest components.
/// Hue is in OpenCV units [0,180); saturation and value in [0,255].
struct HeuristicHandOptions {
  int hue_max = 25;
  int hue_wrap_min = 170;  // reds that wrap around 180
  int sat_min = 45;
  int sat_max = 175;
  int val_min = 90;
  int close_kernel = 5;
  int keep_largest = 2;
  int min_component_area = 12;
};

class HeuristicHandSegmenter final : public HandSegmenter {
 public:
  explicit HeuristicHandSegmenter(HeuristicHandOptions opt = {}) : opt_(opt) {}
  Mask segment(const Frame& frame) const override;
  std::string name() const override { return "heuristic"; }
  const HeuristicHandOptions& options() const { return opt_; }

 private:
  HeuristicHandOptions opt_;
};

/// TorchScript model mapping a 1x3xHxW float image in [0,1] to 1x1xHxW hand logits.
class LearnedHandSegmenter final : public HandSegmenter {
 public:
  /// Throws ErrorKind::io when the weights file is missing or cannot be deserialized.
  static std::unique_ptr<LearnedHandSegmenter> load(const std::filesystem::path& weights);
  ~LearnedHandSegmenter() override;

  Mask segment(const Frame& frame) const override;
  std::string name() const override { return "learned"; }

 private:
  struct Impl;
  explicit LearnedHandSegmenter(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

inline Mask segment_hands(const HandSegmenter& segmenter, const Frame& frame) {
  frame.validate();
  return segmenter.segment(frame);
}

// ---------------------------------------------------------------------------
// Gesture-conditioned object segmentation

struct SegModelConfig {
  int in_channels = 4;  // 4 = RGB + hand mask, 3 = RGB only
  int depth = 3;        // down/up levels
  int base_width = 16;
  int resolution = 128;  // square network input side
};

struct SegmentationResult {
  FloatMap probability;  // at frame resolution, values in [0,1]
  Mask mask;             // probability >= 0.5
};

struct UNet;
struct SegTrainConfig;
struct SegTrainResult;

class ObjectSegmenter {
 public:
  ObjectSegmenter();
  ~ObjectSegmenter();
  ObjectSegmenter(const ObjectSegmenter&);
  ObjectSegmenter& operator=(const ObjectSegmenter&);
  ObjectSegmenter(ObjectSegmenter&&) noexcept;
  ObjectSegmenter& operator=(ObjectSegmenter&&) noexcept;

  /// Freshly initialized weights, deterministic per seed.
  static ObjectSegmenter create(const SegModelConfig& cfg, std::uint64_t seed);
  static ObjectSegmenter load(const std::filesystem::path& dir);
  /// Writes weights.pt and model.json.
  void save(const std::filesystem::path& dir) const;

  bool loaded() const { return net_ != nullptr; }
  const SegModelConfig& config() const { return cfg_; }
  std::size_t parameter_count() const;

  std::uint64_t seed = 0;
  std::string training_fingerprint;

  /// Reentrant: the weights are never mutated after construction.
  SegmentationResult segment(const Frame& frame, const Mask& hand_mask) const;

  std::shared_ptr<UNet> net() const { return net_; }

 private:
  friend SegTrainResult train_object_segmenter(const DatasetManifest&, const SegTrainConfig&);

  SegModelConfig cfg_;
  std::shared_ptr<UNet> net_;
};

inline SegmentationResult segment_object(const ObjectSegmenter& model, const Frame& frame, const Mask& hand_mask) {
  return model.segment(frame, hand_mask);
}

struct SegTrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  double split_ratio = 0.8;
  SegModelConfig model;  // model.in_channels selects 3 (ablation) or 4 (full)
  std::function<void(double)> progress;  // fraction in [0,1]
};

struct SegTrainReport {
  std::vector<double> epoch_loss;
  double heldout_mean_iou = 0.0;
  std::vector<double> heldout_iou;
  std::size_t train_images = 0;
  std::size_t test_images = 0;
  SplitSpec split;
  double seconds = 0.0;
};

struct SegTrainResult {
  ObjectSegmenter model;
  SegTrainReport report;
};

/// Splits by participant, trains with per-pixel BCE, scores mean IoU on the held-out participants.
SegTrainResult train_object_segmenter(const DatasetManifest& manifest, const SegTrainConfig& config);

struct SegEvalReport {
  double mean_iou = 0.0;
  std::vector<double> iou;
};

/// Hand masks come from the record when present, otherwise from `fallback_hands`.
SegEvalReport evaluate_segmenter(const ObjectSegmenter& model, const DatasetManifest& manifest,
                                 const std::vector<ManifestRecord>& records, const HandSegmenter& fallback_hands);

}  // namespace imt
