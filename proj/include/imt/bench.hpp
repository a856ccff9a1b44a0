#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "imt/classifier.hpp"
#include "imt/diversity.hpp"
#include "imt/segmentation.hpp"
#include "imt/session.hpp"
#include "imt/synth.hpp"

namespace imt {

// ---------------------------------------------------------------------------
// Segmentation benchmark: full (RGB + hand) vs RGB-only segmenter on the same split.

struct SegBenchConfig {
  int n_scenes = 400;
  std::uint64_t seed = 7;
  int epochs = 10;
  int resolution = 64;
  SynthOptions scenes = default_scenes();
  std::filesystem::path work_dir;  // scenes are written here
  std::function<void(const std::string&, double)> progress;

  /// Every scene gets an unmarked skin region next to a distractor; without it an RGB-only
  /// model finds the target from skin colour alone.
  static SynthOptions default_scenes() {
    SynthOptions o;
    o.decoy_hand_prob = 1.0;
    return o;
  }
};

struct SegBenchResult {
  SegTrainReport full;      // 4 channels
  SegTrainReport ablation;  // 3 channels
  double gap = 0.0;
  ObjectSegmenter full_model;
  std::vector<SynthScene> heldout;  // test-split scenes, in manifest order
};

SegBenchResult bench_segmentation(const SegBenchConfig& cfg);

struct SensitivityCase {
  double target_iou_before = 0, distractor_iou_before = 0;
  double target_iou_after = 0, distractor_iou_after = 0;
  bool flipped = false;
};

struct SensitivityResult {
  std::vector<SensitivityCase> cases;
  int flipped = 0;
  double flip_rate = 0.0;
};

/// Moves the hand mask by (distractor centre - target centre) and checks that the
/// prediction's IoU ordering (target vs distractor) reverses. Scenes without a
/// distractor are skipped; at most `n` scenes are used.
SensitivityResult conditioning_sensitivity(const ObjectSegmenter& model, const std::vector<SynthScene>& scenes,
                                           int n = 50);

// ---------------------------------------------------------------------------
// Shared helpers for classifier benches

/// One scene per (label, view) pair; the layout seed comes from `rng`.
std::vector<SynthScene> scenes_for_views(const std::vector<int>& labels, const std::vector<ViewParams>& views,
                                         std::mt19937_64& rng, const SynthOptions& opt);

/// Categories 0..k-1 named after the target shape.
std::vector<Category> shape_categories(int num_classes);

using MaskSource = std::function<std::shared_ptr<const Mask>(const SynthScene&)>;

/// Teaching set with samples t0001.. in scene order. A null MaskSource attaches no masks.
TeachingSet teaching_set_from_scenes(const std::vector<SynthScene>& scenes, int num_classes, Condition condition,
                                     const MaskSource& masks = {});

/// sha256 over all frame pixels, in order.
std::string frames_fingerprint(const TeachingSet& set);

struct HeldoutScore {
  double accuracy = 0.0;
  double mean_explanation_iou = 0.0;
  std::vector<double> confidence;  // top-class probability
  std::vector<double> explanation_iou;
  std::vector<bool> correct;
};

/// Assesses each scene with the default (argmax) target and scores the saliency map
/// against the object mask.
HeldoutScore score_heldout(const ClassifierSnapshot& model, const std::vector<SynthScene>& scenes);

// ---------------------------------------------------------------------------
// Spurious-cue benchmark: a class-coloured corner patch predicts the label perfectly.

struct SpuriousBenchConfig {
  std::uint64_t seed = 11;
  int num_classes = 3;
  int n_per_class = 30;
  int heldout = 50;
  ClsTrainConfig cls;
};

struct SpuriousBenchResult {
  HeldoutScore unmasked;
  HeldoutScore masked;
  /// Fraction of held-out frames where the unmasked model is confident (>= 0.7)
  /// while its explanation misses the object (IoU < 0.2).
  double confident_off_object = 0.0;
  int masked_better_pairs = 0;
  double seconds = 0.0;
};

SpuriousBenchResult bench_spurious(const SpuriousBenchConfig& cfg);

// ---------------------------------------------------------------------------
// Condition harness: the four annotation conditions with simulated annotation cost.

struct ConditionRun {
  Condition condition = Condition::naive;
  double annotation_seconds_per_sample = 0.0;
  double total_seconds = 0.0;  // simulated annotation time for the whole teaching set
  double accuracy = 0.0;
  double explanation_iou = 0.0;
  double mask_iou = 0.0;  // mean IoU of the attached masks vs ground truth; 0 for naive
  double wall_seconds = 0.0;
  std::string frames_fingerprint;
};

struct ConditionsBenchConfig {
  std::uint64_t seed = 5;
  int num_classes = 3;
  int n_per_class = 40;
  int heldout = 60;
  double click_seconds = 25.0;
  double contour_seconds = 35.0;
  ClsTrainConfig cls = [] {
    ClsTrainConfig c;
    c.epochs = 30;
    return c;
  }();
  /// Object segmenter for the in-situ condition. When null, one is trained on scenes
  /// drawn from the bench's own scene distribution (segmenter_scenes, segmenter_epochs).
  std::shared_ptr<const ObjectSegmenter> segmenter;
  int segmenter_scenes = 300;
  int segmenter_epochs = 8;
  std::filesystem::path work_dir;  // needed only when a segmenter is trained
};

std::vector<ConditionRun> bench_conditions(const ConditionsBenchConfig& cfg);

/// The in-situ segmenter bench_conditions trains when none is supplied.
std::shared_ptr<const ObjectSegmenter> train_condition_segmenter(const ConditionsBenchConfig& cfg);

// ---------------------------------------------------------------------------
// Teacher policies and the diversity benchmark

enum class TeacherPolicyKind { diverse, redundant };

struct TeacherPolicy {
  TeacherPolicyKind kind = TeacherPolicyKind::diverse;
  float jitter = 0.05f;  // redundant only: spread around the class's single view

  /// n_per_class views for each class, labels grouped by class.
  std::vector<SynthScene> teach(int num_classes, int n_per_class, std::uint64_t seed, const SynthOptions& opt) const;
};

std::string_view to_string(TeacherPolicyKind k);

struct PolicyOutcome {
  double accuracy = 0.0;
  DiversityReport diversity;
};

struct DiversityBenchConfig {
  std::uint64_t seed = 1;
  int num_classes = 3;
  int n_per_class = 40;
  int heldout = 150;
  ClsTrainConfig cls = [] {
    ClsTrainConfig c;
    c.epochs = 30;
    return c;
  }();
};

struct DiversityBenchResult {
  PolicyOutcome diverse;
  PolicyOutcome redundant;
  std::string embedding_space;
};

/// Both teaching sets are scored in one random-projection space fitted on their union,
/// so the two diversity scores are comparable.
DiversityBenchResult bench_diversity(const DiversityBenchConfig& cfg);

// ---------------------------------------------------------------------------
// JSON

nlohmann::json to_json(const SegTrainReport& r);
nlohmann::json to_json(const SegBenchResult& r);
nlohmann::json to_json(const SensitivityResult& r);
nlohmann::json to_json(const HeldoutScore& s);
nlohmann::json to_json(const SpuriousBenchResult& r);
nlohmann::json to_json(const ConditionRun& r);
nlohmann::json to_json(const DiversityReport& r);
nlohmann::json to_json(const DiversityBenchResult& r);
nlohmann::json to_json(const ClsTrainReport& r);

}  // namespace imt
