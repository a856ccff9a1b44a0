#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "imt/classifier.hpp"
#include "imt/session.hpp"

namespace imt {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Optional. segmenter/ (weights.pt + model.json) and hand.pt are loaded from here
  /// when present; trained classifiers are saved under classifiers/<job id>.
  std::filesystem::path model_dir;
  std::size_t max_frame_bytes = 4u << 20;  // decoded PNG size limit
  std::size_t ring_capacity = 256;
  ClsTrainConfig train_defaults;
};

/// Overrides from PORT, MODEL_DIR and MAX_FRAME_BYTES when set.
ServiceConfig config_from_env(ServiceConfig base = {});

/// HTTP/JSON front end over sessions, live teaching, training jobs, assessment and the
/// per-session event stream (server-sent events at GET /sessions/{id}/events).
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread. Returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const;

  /// Blocks until every training job has finished.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Export as one JSON document: {"session": <session.json>, "files": {relative path: base64 PNG}}.
nlohmann::json export_session_bundle(const TeachingSet& set);
TeachingSet import_session_bundle(const nlohmann::json& bundle);

}  // namespace imt
