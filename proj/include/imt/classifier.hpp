#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "imt/image.hpp"
#include "imt/session.hpp"

namespace imt {

struct ClassifierNet;

struct ClsTrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
  bool use_masks = false;
  /// Per sample per epoch, the chance that background pixels are replaced by mid-gray.
  double background_suppression_prob = 0.5;
  int input_resolution = 64;
  int embedding_dim = 64;
  std::function<void(double)> progress;

  /// The suppression probability actually applied: 0 unless masks are in use.
  double effective_suppression() const { return use_masks ? background_suppression_prob : 0.0; }
  std::string fingerprint() const;
};

/// Trained (or freshly initialized) classifier. Immutable once published.
struct ClassifierSnapshot {
  std::shared_ptr<ClassifierNet> net;
  std::vector<Category> categories;  // logit i belongs to categories[i]
  int embedding_dim = 64;
  int input_resolution = 64;
  ClsTrainConfig config;
  std::string config_fingerprint;
  std::string fingerprint;  // identifies these weights
  std::int64_t created_at = 0;

  /// Logit index of a category; throws not_found for unknown ids.
  std::size_t index_of(CategoryId id) const;
};

struct ClsTrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  double seconds = 0.0;
};

struct ClsTrainResult {
  std::shared_ptr<const ClassifierSnapshot> model;
  ClsTrainReport report;
};

/// Throws invalid_argument when train_classifier would reject the inputs.
void check_trainable(const TeachingSet& set, const ClsTrainConfig& config);

/// Needs >= 2 categories with >= 1 sample each. Deterministic per seed.
ClsTrainResult train_classifier(const TeachingSet& set, const ClsTrainConfig& config);

/// Randomly initialized model over the given categories.
std::shared_ptr<ClassifierSnapshot> make_untrained_classifier(std::vector<Category> categories,
                                                              const ClsTrainConfig& config = {});

struct Prediction {
  std::vector<double> probabilities;  // aligned with model.categories
  std::size_t top_index = 0;
  CategoryId top = 0;
};

Prediction predict(const ClassifierSnapshot& model, const Frame& frame);
std::vector<Prediction> predict_batch(const ClassifierSnapshot& model, const std::vector<const Frame*>& frames);

/// Pooled backbone features, length model.embedding_dim.
std::vector<float> embed(const ClassifierSnapshot& model, const Frame& frame);

/// Writes weights.pt + model.json (categories, d, config, metrics).
void save_classifier(const ClassifierSnapshot& model, const std::filesystem::path& dir,
                     const ClsTrainReport* report = nullptr);
std::shared_ptr<ClassifierSnapshot> load_classifier(const std::filesystem::path& dir);

/// Copy of the model whose head is re-drawn from `seed` (saliency sanity checks).
std::shared_ptr<ClassifierSnapshot> with_random_head(const ClassifierSnapshot& model, std::uint64_t seed);

}  // namespace imt
