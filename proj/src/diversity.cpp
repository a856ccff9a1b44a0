#include "imt/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "imt/error.hpp"

namespace imt {

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Projection2D fit_projection(const std::vector<std::vector<float>>& embeddings) {
  if (embeddings.empty()) fail(ErrorKind::invalid_argument, "fit_projection: empty input");
  const std::size_t d = embeddings.front().size();
  if (d < 2) fail(ErrorKind::invalid_argument, "fit_projection: embeddings need >= 2 dimensions");
  const auto n = static_cast<Eigen::Index>(embeddings.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = embeddings[static_cast<std::size_t>(i)];
    if (e.size() != d) fail(ErrorKind::invalid_argument, "fit_projection: embedding length mismatch");
    for (std::size_t j = 0; j < d; ++j) x(i, static_cast<Eigen::Index>(j)) = e[j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorKind::invalid_argument, "fit_projection: eigen decomposition failed");
  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = eig.eigenvectors();
  const auto last = static_cast<Eigen::Index>(d) - 1;
  double total = 0.0;
  for (Eigen::Index i = 0; i <= last; ++i) total += std::max(0.0, values(i));

  Projection2D p;
  p.fitted_on = embeddings.size();
  p.mean.assign(mean.data(), mean.data() + mean.size());
  for (int k = 0; k < 2; ++k) {
    const Eigen::VectorXd v = vectors.col(last - k);
    // Orientation: the largest-magnitude coordinate (first one on ties) is positive.
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < v.size(); ++j) {
      if (std::fabs(v(j)) > std::fabs(v(arg))) arg = j;
    }
    const double sign = v(arg) < 0.0 ? -1.0 : 1.0;
    auto& b = p.basis[static_cast<std::size_t>(k)];
    b.resize(d);
    for (std::size_t j = 0; j < d; ++j) b[j] = sign * v(static_cast<Eigen::Index>(j));
    const double lambda = std::max(0.0, values(last - k));
    p.explained[static_cast<std::size_t>(k)] = total > 1e-300 ? lambda / total : 0.0;
  }
  return p;
}

Point2 project(const Projection2D& p, std::span<const float> embedding) {
  if (embedding.size() != p.dim()) {
    fail(ErrorKind::invalid_argument, "project: embedding length " + std::to_string(embedding.size()) +
                                          " != projection dim " + std::to_string(p.dim()));
  }
  Point2 out;
  for (std::size_t j = 0; j < embedding.size(); ++j) {
    const double c = static_cast<double>(embedding[j]) - p.mean[j];
    out.x += c * p.basis[0][j];
    out.y += c * p.basis[1][j];
  }
  return out;
}

double dispersion(std::span<const Point2> points) {
  if (points.size() < 2) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      sum += distance(points[i], points[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

DiversityReport summarize_diversity(std::vector<ClassDiversity> classes) {
  DiversityReport r;
  std::size_t total = 0;
  double weighted = 0.0;
  for (ClassDiversity& c : classes) {
    c.dispersion = dispersion(c.points);
    total += c.points.size();
    weighted += static_cast<double>(c.points.size()) * c.dispersion;
  }
  r.overall = total > 0 ? weighted / static_cast<double>(total) : 0.0;
  r.per_class = std::move(classes);
  return r;
}

// ---------------------------------------------------------------------------

namespace {
constexpr int kThumbSide = 16;
constexpr int kThumbLen = kThumbSide * kThumbSide * 3;
}  // namespace

RandomProjectionEmbedder::RandomProjectionEmbedder(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {
  if (dim < 2) fail(ErrorKind::invalid_argument, "embedding dim must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f / std::sqrt(static_cast<float>(kThumbLen)));
  weights_.resize(static_cast<std::size_t>(dim) * kThumbLen);
  for (float& w : weights_) w = normal(rng);
}

std::vector<float> RandomProjectionEmbedder::embed(const Frame& f) const {
  const Frame thumb = resize_bilinear(f, kThumbSide, kThumbSide);
  std::vector<float> out(static_cast<std::size_t>(dim_), 0.0f);
  for (int k = 0; k < dim_; ++k) {
    const float* w = &weights_[static_cast<std::size_t>(k) * kThumbLen];
    float acc = 0.0f;
    for (int i = 0; i < kThumbLen; ++i) acc += w[i] * (thumb.pixels[static_cast<std::size_t>(i)] / 255.0f - 0.5f);
    out[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

std::string RandomProjectionEmbedder::id() const { return "rp:" + std::to_string(seed_) + ":" + std::to_string(dim_); }

std::shared_ptr<const Embedder> make_embedder(std::shared_ptr<const ClassifierSnapshot> model) {
  if (model && model->net) return std::make_shared<ClassifierEmbedder>(std::move(model));
  static const auto fallback = std::make_shared<const RandomProjectionEmbedder>();
  return fallback;
}

DiversityReport diversity_report(const TeachingSet& set, const Embedder& embedder, const Projection2D& p) {
  std::vector<ClassDiversity> classes;
  for (const Category& c : set.categories) {
    ClassDiversity cd;
    cd.category = c.id;
    for (const TeachingSample& s : set.samples) {
      if (s.category_id != c.id) continue;
      cd.points.push_back(project(p, embedder.embed(*s.frame)));
      cd.sample_ids.push_back(s.sample_id);
    }
    classes.push_back(std::move(cd));
  }
  return summarize_diversity(std::move(classes));
}

LivePoint make_live_point(const Point2& position, CategoryId category, std::span<const Point2> same_class) {
  LivePoint lp;
  lp.position = position;
  lp.category = category;
  lp.timestamp = now_ms();
  if (!same_class.empty()) {
    double best = std::numeric_limits<double>::infinity();
    for (const Point2& q : same_class) best = std::min(best, distance(position, q));
    lp.novelty = best;
  }
  return lp;
}

// ---------------------------------------------------------------------------

bool RefitCoordinator::request() {
  std::lock_guard lock(mu_);
  if (pending_) return false;
  pending_ = true;
  return true;
}

bool RefitCoordinator::begin() {
  std::lock_guard lock(mu_);
  if (!pending_ || running_) return false;
  pending_ = false;
  running_ = true;
  return true;
}

void RefitCoordinator::finish() {
  std::lock_guard lock(mu_);
  running_ = false;
  ++completed_;
}

int RefitCoordinator::pending() const {
  std::lock_guard lock(mu_);
  return pending_ ? 1 : 0;
}

bool RefitCoordinator::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

std::uint64_t RefitCoordinator::completed() const {
  std::lock_guard lock(mu_);
  return completed_;
}

// ---------------------------------------------------------------------------

DiversityEngine::DiversityEngine(SetSource source, bool async)
    : source_(std::move(source)), async_(async), embedder_(make_embedder(nullptr)) {
  if (async_) worker_ = std::thread([this] { worker_loop(); });
}

DiversityEngine::~DiversityEngine() {
  if (worker_.joinable()) {
    {
      std::lock_guard lock(wake_mu_);
      stop_ = true;
    }
    wake_.notify_all();
    worker_.join();
  }
}

bool DiversityEngine::notify_change() {
  const bool scheduled = coord_.request();
  if (async_) {
    std::lock_guard lock(wake_mu_);
    wake_.notify_one();
  } else {
    while (coord_.begin()) {
      refit_once();
      coord_.finish();
    }
  }
  return scheduled;
}

void DiversityEngine::set_model(std::shared_ptr<const ClassifierSnapshot> model) {
  {
    std::lock_guard lock(mu_);
    embedder_ = make_embedder(std::move(model));
    cache_.clear();
  }
  notify_change();
}

void DiversityEngine::on_refit(std::function<void()> cb) {
  std::lock_guard lock(mu_);
  on_refit_ = std::move(cb);
}

void DiversityEngine::worker_loop() {
  std::unique_lock lock(wake_mu_);
  while (true) {
    wake_.wait(lock, [this] { return stop_ || coord_.pending() > 0; });
    if (stop_) return;
    lock.unlock();
    while (coord_.begin()) {
      refit_once();
      coord_.finish();
    }
    lock.lock();
    idle_.notify_all();
  }
}

void DiversityEngine::wait_idle() {
  if (!async_) return;
  std::unique_lock lock(wake_mu_);
  idle_.wait(lock, [this] { return coord_.pending() == 0 && !coord_.running(); });
}

std::vector<float> DiversityEngine::cached_embedding(const TeachingSample& s, const Embedder& e) const {
  const std::string key = e.id() + "/" + s.sample_id;
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  std::vector<float> v = e.embed(*s.frame);
  std::lock_guard lock(mu_);
  cache_.emplace(key, v);
  return v;
}

void DiversityEngine::refit_once() {
  const std::shared_ptr<const SessionState> state = source_();
  std::shared_ptr<const Embedder> emb;
  {
    std::lock_guard lock(mu_);
    emb = embedder_;
  }
  std::vector<std::vector<float>> vecs;
  if (state) {
    for (const TeachingSample& s : state->teaching_set.samples) vecs.push_back(cached_embedding(s, *emb));
  }
  std::function<void()> cb;
  std::shared_ptr<const ServedProjection> next;
  if (!vecs.empty()) next = std::make_shared<const ServedProjection>(ServedProjection{fit_projection(vecs), emb});
  std::unique_lock lock(mu_);
  served_ = std::move(next);
  // drop embeddings of removed samples
  if (state) {
    std::set<std::string> live;
    for (const TeachingSample& s : state->teaching_set.samples) live.insert(emb->id() + "/" + s.sample_id);
    std::erase_if(cache_, [&](const auto& kv) { return !live.contains(kv.first); });
  }
  cb = on_refit_;
  lock.unlock();
  if (cb) cb();
}

std::shared_ptr<const ServedProjection> DiversityEngine::served() const {
  std::lock_guard lock(mu_);
  return served_;
}

std::shared_ptr<const Projection2D> DiversityEngine::projection() const {
  auto s = served();
  if (!s) return nullptr;
  return {s, &s->projection};
}

std::shared_ptr<const Embedder> DiversityEngine::embedder() const {
  std::lock_guard lock(mu_);
  return embedder_;
}

std::vector<Point2> DiversityEngine::class_points(const TeachingSet& set, CategoryId c, const Projection2D& p,
                                                  const Embedder& e) const {
  std::vector<Point2> pts;
  for (const TeachingSample& s : set.samples) {
    if (s.category_id == c) pts.push_back(project(p, cached_embedding(s, e)));
  }
  return pts;
}

LivePoint DiversityEngine::live_point(const Frame& frame, CategoryId active_class) const {
  const auto s = served();
  if (!s) fail(ErrorKind::conflict, "projection unavailable");
  const Point2 pos = project(s->projection, s->embedder->embed(frame));
  const auto state = source_();
  std::vector<Point2> same;
  if (state) same = class_points(state->teaching_set, active_class, s->projection, *s->embedder);
  return make_live_point(pos, active_class, same);
}

DiversityReport DiversityEngine::report() const {
  const auto s = served();
  const auto state = source_();
  std::vector<ClassDiversity> classes;
  if (!state) return {};
  for (const Category& c : state->teaching_set.categories) {
    ClassDiversity cd;
    cd.category = c.id;
    if (s) {
      for (const TeachingSample& smp : state->teaching_set.samples) {
        if (smp.category_id != c.id) continue;
        cd.points.push_back(project(s->projection, cached_embedding(smp, *s->embedder)));
        cd.sample_ids.push_back(smp.sample_id);
      }
    }
    classes.push_back(std::move(cd));
  }
  return summarize_diversity(std::move(classes));
}

}  // namespace imt
