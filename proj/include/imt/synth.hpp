#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imt/dataset.hpp"
#include "imt/image.hpp"
#include "imt/session.hpp"

namespace imt {

// Desk-scale synthetic scenes: textured background, one target shape, distractor
// shapes, and a skin-toned "hand" adjacent to the target. The generator knows every
// ground-truth region, which is what the segmentation and saliency benches score against.

enum class ShapeKind { square, circle, triangle, diamond };
inline constexpr int kShapeKinds = 4;

enum class DistractorStyle {
  matching,  // drawn from the same shape/colour distribution as targets
  neutral,   // desaturated gray shapes
};

struct SynthOptions {
  int size = 128;
  int num_classes = 4;  // class label selects the target shape (label % 4)
  int images_per_participant = 12;
  int min_distractors = 1;
  int max_distractors = 1;
  DistractorStyle distractor_style = DistractorStyle::matching;
  /// Probability of a second, unmarked skin region adjacent to a distractor.
  double decoy_hand_prob = 0.0;
  /// Adds a corner patch whose colour is determined by the class label.
  bool spurious_cue = false;
  /// Target radius range at 128 px; ViewParams::scale interpolates between them.
  float target_radius_min = 11.0f;
  float target_radius_max = 20.0f;
  /// Side of the cue patch as a fraction of the scene side.
  float cue_fraction = 0.22f;
};

/// Target appearance knobs, each normalized to [0,1]. Teacher policies sample these.
struct ViewParams {
  float x = 0.5f;
  float y = 0.5f;
  float scale = 0.5f;
  float hue = 0.0f;
  float lighting = 0.5f;
  float background = 0.5f;

  static ViewParams random(std::mt19937_64& rng);
  ViewParams jittered(std::mt19937_64& rng, float amount) const;
};

struct ShapeSpec {
  ShapeKind kind = ShapeKind::square;
  float cx = 0, cy = 0, radius = 0, rotation = 0;
  Rgb color{};
};

struct HandSpec {
  float cx = 0, cy = 0;
  float semi_major = 0, semi_minor = 0;
  float angle = 0;  // direction from hand toward the object it indicates
  bool finger = false;
  Rgb tone{};
};

struct SceneSpec {
  int size = 128;
  int label = 0;
  GestureType gesture = GestureType::exhibiting;
  float background_level = 128;
  float lighting = 1.0f;
  std::uint64_t texture_seed = 0;
  ShapeSpec target;
  std::vector<ShapeSpec> distractors;
  HandSpec hand;
  std::optional<HandSpec> decoy;
  std::optional<Rgb> cue_color;
  int cue_corner = 0;
  int cue_side = 0;  // pixels
};

struct SynthScene {
  std::string participant_id;
  SceneSpec spec;
  Frame image;
  Mask object_mask;
  Mask hand_mask;
  Mask distractor_mask;
};

/// Lays out one scene. The view controls the target; `layout_seed` drives everything else.
SceneSpec make_scene_spec(int label, GestureType gesture, const ViewParams& view, std::uint64_t layout_seed,
                          const SynthOptions& opt);
SynthScene render_scene(const SceneSpec& spec);

/// n scenes; gesture tags round-robin, participants grouped by images_per_participant.
std::vector<SynthScene> generate_scenes(int n, std::uint64_t seed, const SynthOptions& opt);

/// Writes images/masks as PNG plus manifest.json under dir, and returns the loaded manifest.
DatasetManifest write_scenes(const std::vector<SynthScene>& scenes, const std::filesystem::path& dir);

DatasetManifest generate_synthetic(int n_scenes, std::uint64_t seed, bool spurious_cue,
                                   const std::filesystem::path& dir, SynthOptions opt = {});

/// Colour associated with a class for the spurious corner patch.
Rgb cue_color_for_class(int label);

}  // namespace imt
