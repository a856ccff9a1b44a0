#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "imt/classifier.hpp"
#include "imt/image.hpp"
#include "imt/session.hpp"

namespace imt {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(const Point2& a, const Point2& b);

/// Top-2 principal directions of a set of embeddings. Each basis vector's
/// largest-magnitude coordinate is positive, which fixes the orientation.
struct Projection2D {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> basis;
  std::array<double, 2> explained{0.0, 0.0};  // fraction of total variance
  std::size_t fitted_on = 0;

  std::size_t dim() const { return mean.size(); }
};

/// Needs >= 1 embedding, all of the same length d >= 2.
Projection2D fit_projection(const std::vector<std::vector<float>>& embeddings);
Point2 project(const Projection2D& p, std::span<const float> embedding);

/// Mean pairwise Euclidean distance; 0 for fewer than two points.
double dispersion(std::span<const Point2> points);

struct ClassDiversity {
  CategoryId category = 0;
  std::vector<Point2> points;
  std::vector<std::string> sample_ids;
  double dispersion = 0.0;
};

struct DiversityReport {
  std::vector<ClassDiversity> per_class;
  double overall = 0.0;  // count-weighted mean of per-class dispersion
};

/// Builds the report from already-projected points, grouped by class.
DiversityReport summarize_diversity(std::vector<ClassDiversity> classes);

// ---------------------------------------------------------------------------
// Embedding sources

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<float> embed(const Frame& f) const = 0;
  /// Changes whenever the embedding space changes.
  virtual std::string id() const = 0;
};

/// Model-free space: frame downsampled to 16x16 RGB, multiplied by a fixed seeded
/// Gaussian matrix. Available before any classifier exists.
class RandomProjectionEmbedder final : public Embedder {
 public:
  explicit RandomProjectionEmbedder(std::uint64_t seed = 0x5eed, int dim = 64);
  std::vector<float> embed(const Frame& f) const override;
  std::string id() const override;

 private:
  std::uint64_t seed_;
  int dim_;
  std::vector<float> weights_;  // dim x 768
};

class ClassifierEmbedder final : public Embedder {
 public:
  explicit ClassifierEmbedder(std::shared_ptr<const ClassifierSnapshot> model) : model_(std::move(model)) {}
  std::vector<float> embed(const Frame& f) const override { return imt::embed(*model_, f); }
  std::string id() const override { return "cls:" + model_->fingerprint; }

 private:
  std::shared_ptr<const ClassifierSnapshot> model_;
};

/// Classifier backbone when a model exists, otherwise the random-projection fallback.
std::shared_ptr<const Embedder> make_embedder(std::shared_ptr<const ClassifierSnapshot> model);

DiversityReport diversity_report(const TeachingSet& set, const Embedder& embedder, const Projection2D& p);

struct LivePoint {
  Point2 position;
  std::optional<double> novelty;  // nullopt = infinity (class has no samples yet)
  CategoryId category = 0;
  std::int64_t timestamp = 0;
};

/// Novelty is the minimum 2-D distance to the existing same-class points.
LivePoint make_live_point(const Point2& position, CategoryId category, std::span<const Point2> same_class);

// ---------------------------------------------------------------------------
// Refit coordination

/// Tracks refit requests: one running refit plus at most one pending one.
class RefitCoordinator {
 public:
  /// True when this request created a pending refit; false when coalesced into an existing one.
  bool request();
  /// Worker side: claims the pending refit. False when nothing is pending.
  bool begin();
  void finish();

  int pending() const;
  bool running() const;
  std::uint64_t completed() const;

 private:
  mutable std::mutex mu_;
  bool pending_ = false;
  bool running_ = false;
  std::uint64_t completed_ = 0;
};

/// A fitted projection together with the embedding space it was fitted in.
struct ServedProjection {
  Projection2D projection;
  std::shared_ptr<const Embedder> embedder;
};

/// Owns the served projection and the embedding cache for one session. The served
/// projection is swapped atomically; readers never see a partial fit.
class DiversityEngine {
 public:
  using SetSource = std::function<std::shared_ptr<const SessionState>()>;

  /// `async` = false runs refits inline on the calling thread (tests, CLI).
  explicit DiversityEngine(SetSource source, bool async = true);
  ~DiversityEngine();
  DiversityEngine(const DiversityEngine&) = delete;
  DiversityEngine& operator=(const DiversityEngine&) = delete;

  /// Call after every capture/removal. Returns whether a new refit was scheduled.
  bool notify_change();
  /// Switch embedding space (new trained model). Clears the cache and schedules a refit.
  void set_model(std::shared_ptr<const ClassifierSnapshot> model);

  std::shared_ptr<const Projection2D> projection() const;
  std::shared_ptr<const ServedProjection> served() const;
  /// Space used for the next refit.
  std::shared_ptr<const Embedder> embedder() const;

  /// Throws conflict("projection unavailable") before the first fit.
  LivePoint live_point(const Frame& frame, CategoryId active_class) const;
  DiversityReport report() const;

  /// Called after each completed refit, on the refitting thread.
  void on_refit(std::function<void()> cb);

  /// Blocks until no refit is pending or running.
  void wait_idle();
  const RefitCoordinator& coordinator() const { return coord_; }

 private:
  void refit_once();
  void worker_loop();
  std::vector<float> cached_embedding(const TeachingSample& s, const Embedder& e) const;
  std::vector<Point2> class_points(const TeachingSet& set, CategoryId c, const Projection2D& p,
                                   const Embedder& e) const;

  SetSource source_;
  bool async_;
  RefitCoordinator coord_;

  mutable std::mutex mu_;  // guards served_, embedder_, cache_, on_refit_
  std::shared_ptr<const ServedProjection> served_;
  std::shared_ptr<const Embedder> embedder_;
  mutable std::map<std::string, std::vector<float>> cache_;  // key: embedder id + sample id
  std::function<void()> on_refit_;

  std::mutex wake_mu_;
  std::condition_variable wake_;
  std::condition_variable idle_;
  bool stop_ = false;
  std::thread worker_;
};

}  // namespace imt
