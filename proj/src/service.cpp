#include "imt/service.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include <httplib.h>

#include "imt/bench.hpp"
#include "imt/codec.hpp"
#include "imt/diversity.hpp"
#include "imt/error.hpp"
#include "imt/events.hpp"
#include "imt/live.hpp"
#include "imt/saliency.hpp"
#include "imt/segmentation.hpp"

namespace imt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// JSON views

json category_json(const Category& c) { return {{"id", c.id}, {"name", c.name}, {"color", c.color}}; }

json sample_json(const TeachingSample& s) {
  return {{"sample_id", s.sample_id},
          {"category_id", s.category_id},
          {"condition", to_string(s.condition)},
          {"captured_at", s.captured_at},
          {"width", s.frame->width},
          {"height", s.frame->height},
          {"has_object_mask", s.object_mask != nullptr},
          {"has_hand_mask", s.hand_mask != nullptr}};
}

json live_point_json(const LivePoint& p) {
  return {{"x", p.position.x},
          {"y", p.position.y},
          {"novelty", p.novelty ? json(*p.novelty) : json(nullptr)},
          {"class", p.category >= 0 ? json(p.category) : json(nullptr)},
          {"timestamp", p.timestamp}};
}

json prediction_json(const ClassifierSnapshot& m, const Prediction& p) {
  json probs = json::array();
  for (std::size_t i = 0; i < p.probabilities.size(); ++i) {
    probs.push_back({{"category_id", m.categories[i].id}, {"name", m.categories[i].name}, {"p", p.probabilities[i]}});
  }
  return {{"probabilities", probs}, {"top", p.top}};
}

Mask saliency_mask(const FloatMap& m) {
  Mask out(m.width, m.height);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    out.values[i] = static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(m.values[i], 0.0f, 1.0f)));
  }
  return out;
}

std::string b64_png(const Frame& f) { return base64_encode(encode_png(f)); }
std::string b64_png(const Mask& m) { return base64_encode(encode_png(m)); }
std::string b64_png(const RgbaImage& m) { return base64_encode(encode_png(m)); }

std::string random_token(std::size_t bytes) {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < bytes; ++i) {
    const auto b = static_cast<unsigned>(rng() & 0xff);
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Job {
  std::string id;
  std::string session_id;
  std::string kind;  // classifier | segmenter
  std::int64_t created_at = 0;

  mutable std::mutex mu;
  std::string status = "queued";
  double progress = 0.0;
  json report;
  std::string error;

  json to_json() const {
    std::lock_guard lock(mu);
    json j{{"job_id", id},
           {"session_id", session_id.empty() ? json(nullptr) : json(session_id)},
           {"kind", kind},
           {"status", status},
           {"progress", progress},
           {"created_at", created_at}};
    if (!report.is_null()) j["report"] = report;
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

struct ApiSession {
  std::string id;
  std::int64_t created_at = now_ms();
  Session session;
  EventHub events;
  DiversityEngine diversity;

  std::mutex mu;  // guards the fields below
  std::shared_ptr<const Frame> last_frame;
  std::shared_ptr<const Mask> last_hand;
  std::shared_ptr<const Mask> last_object;
  std::string running_job;

  explicit ApiSession(std::size_t ring)
      : events(ring), diversity([this] { return session.snapshot(); }, /*async=*/true) {}
};

int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return 422;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::io: return 500;
  }
  return 500;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::io: return "io";
  }
  return "io";
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, {{"error", kind}, {"message", message}}, status);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) fail(ErrorKind::invalid_argument, "request body must be a JSON object");
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceConfig cfg;
  httplib::Server server;
  std::thread server_thread;
  std::atomic<bool> stopping{false};
  int bound_port = -1;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<ApiSession>> sessions;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::vector<std::thread> workers;
  int active_jobs = 0;
  std::string running_segmenter_job;

  std::unique_ptr<LivePipeline> live;

  explicit Impl(ServiceConfig c) : cfg(std::move(c)) {
    std::shared_ptr<const HandSegmenter> hands = std::make_shared<HeuristicHandSegmenter>();
    std::shared_ptr<const ObjectSegmenter> objects = default_object_segmenter();
    if (!cfg.model_dir.empty()) {
      if (fs::exists(cfg.model_dir / "hand.pt")) hands = LearnedHandSegmenter::load(cfg.model_dir / "hand.pt");
      if (fs::exists(cfg.model_dir / "segmenter" / "model.json")) {
        objects = std::make_shared<const ObjectSegmenter>(ObjectSegmenter::load(cfg.model_dir / "segmenter"));
      }
    }
    live = std::make_unique<LivePipeline>(hands, objects);
    server.set_payload_max_length(cfg.max_frame_bytes * 4 / 3 + (64u << 10));
    routes();
  }

  // -------------------------------------------------------------------------

  std::shared_ptr<ApiSession> find_session(const std::string& id) {
    std::lock_guard lock(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) fail(ErrorKind::not_found, "unknown session " + id);
    return it->second;
  }

  std::shared_ptr<Job> find_job(const std::string& id) {
    std::lock_guard lock(jobs_mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) fail(ErrorKind::not_found, "unknown job " + id);
    return it->second;
  }

  Frame decode_frame(const json& body, const char* field = "image") {
    if (!body.contains(field) || !body[field].is_string()) {
      fail(ErrorKind::invalid_argument, std::string("missing base64 PNG field '") + field + "'");
    }
    const std::vector<std::uint8_t> bytes = base64_decode(body[field].get<std::string>());
    if (bytes.size() > cfg.max_frame_bytes) fail(ErrorKind::invalid_argument, "frame exceeds MAX_FRAME_BYTES");
    Frame f;
    try {
      f = decode_frame_png(bytes);
    } catch (const Error& e) {
      fail(ErrorKind::invalid_argument, e.what());
    }
    f.validate();
    return f;
  }

  Mask decode_mask(const json& body, const char* field) {
    const std::vector<std::uint8_t> bytes = base64_decode(body.at(field).get<std::string>());
    try {
      return decode_mask_png(bytes);
    } catch (const Error& e) {
      fail(ErrorKind::invalid_argument, e.what());
    }
  }

  static json state_json(const ApiSession& s) {
    const auto st = s.session.snapshot();
    json cats = json::array();
    for (const Category& c : st->teaching_set.categories) cats.push_back(category_json(c));
    json counts = json::object();
    for (const auto& [id, n] : counts_per_category(st->teaching_set)) counts[std::to_string(id)] = n;
    json samples = json::array();
    for (const TeachingSample& smp : st->teaching_set.samples) samples.push_back(sample_json(smp));
    json model = nullptr;
    if (st->latest_snapshot) {
      model = {{"fingerprint", st->latest_snapshot->fingerprint},
               {"created_at", st->latest_snapshot->created_at},
               {"categories", st->latest_snapshot->categories.size()}};
    }
    return {{"session_id", s.id},
            {"created_at", s.created_at},
            {"phase", to_string(st->phase)},
            {"active_category", st->active_category ? json(*st->active_category) : json(nullptr)},
            {"categories", cats},
            {"counts", counts},
            {"samples", samples},
            {"model", model},
            {"projection_available", s.diversity.served() != nullptr},
            {"last_seq", s.events.last_seq()}};
  }

  // -------------------------------------------------------------------------
  // Handlers

  void create_session(const httplib::Request&, httplib::Response& res) {
    auto s = std::make_shared<ApiSession>(cfg.ring_capacity);
    s->id = "s-" + random_token(8);
    ApiSession* raw = s.get();
    s->session.subscribe([raw](const SessionEvent& ev) {
      const char* type = ev.kind == SessionEvent::Kind::sample_added ? "sample_added" : "sample_removed";
      raw->events.publish(type, {{"sample_id", ev.sample_id}, {"category_id", ev.category_id}});
      raw->diversity.notify_change();
    });
    s->diversity.on_refit([raw] { raw->events.publish("diversity_report", to_json(raw->diversity.report())); });
    {
      std::lock_guard lock(sessions_mu);
      sessions[s->id] = s;
    }
    send_json(res, state_json(*s), 201);
  }

  void add_category(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    const json body = parse_body(req);
    const auto st = s->session.snapshot();
    Category c;
    if (body.contains("id")) {
      c.id = body.at("id").get<int>();
    } else {
      c.id = 0;
      for (const Category& e : st->teaching_set.categories) c.id = std::max(c.id, e.id + 1);
    }
    c.name = body.value("name", std::string());
    if (body.contains("color")) c.color = body.at("color").get<Rgb>();
    s->session.add_category(c);
    if (body.value("active", false) || !st->active_category) s->session.set_active_category(c.id);
    send_json(res, category_json(c), 201);
  }

  std::optional<CategoryId> resolve_category(ApiSession& s, const json& body) {
    if (body.contains("category_id") && !body["category_id"].is_null()) {
      const CategoryId id = body["category_id"].get<int>();
      s.session.set_active_category(id);
      return id;
    }
    return s.session.snapshot()->active_category;
  }

  void post_frame(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    const json body = parse_body(req);
    auto frame = std::make_shared<const Frame>(decode_frame(body));
    const std::optional<CategoryId> active = resolve_category(*s, body);
    const LiveResult r = live->process(*frame, active.value_or(-1), &s->diversity);
    {
      std::lock_guard lock(s->mu);
      s->last_frame = frame;
      s->last_hand = std::make_shared<const Mask>(r.hand_mask);
      s->last_object = std::make_shared<const Mask>(r.object.mask);
    }
    json point = r.point ? live_point_json(*r.point) : json(nullptr);
    json event = r.point ? point : json::object();
    event["status"] = r.status;
    s->events.publish("live_point", event);
    send_json(res, {{"mask", b64_png(r.object.mask)},
                    {"hand_mask", b64_png(r.hand_mask)},
                    {"mask_area", r.object.mask.area()},
                    {"live_point", point},
                    {"status", r.status},
                    {"latency_ms", r.latency_ms}});
  }

  void capture(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    const json body = parse_body(req);
    const Condition condition = parse_condition(body.value("condition", std::string("in_situ")));
    std::shared_ptr<const Frame> frame;
    std::shared_ptr<const Mask> object, hand;
    if (body.contains("image")) {
      frame = std::make_shared<const Frame>(decode_frame(body));
      if (condition == Condition::in_situ) {
        const LiveResult r = live->process(*frame, -1, nullptr);
        hand = std::make_shared<const Mask>(r.hand_mask);
        object = std::make_shared<const Mask>(r.object.mask);
      }
    } else {
      std::lock_guard lock(s->mu);
      if (!s->last_frame) fail(ErrorKind::invalid_argument, "no frame received yet; post a frame first");
      frame = s->last_frame;
      hand = s->last_hand;
      object = s->last_object;
    }
    switch (condition) {
      case Condition::naive:
        object.reset();
        hand.reset();
        break;
      case Condition::click:
      case Condition::contour:
        object = body.contains("mask") ? std::make_shared<const Mask>(decode_mask(body, "mask")) : nullptr;
        break;
      case Condition::in_situ: break;
    }
    const std::optional<CategoryId> category = resolve_category(*s, body);
    if (!category) fail(ErrorKind::invalid_argument, "no category given and no active category");
    const TeachingSample smp = s->session.capture(frame, *category, condition, object, hand);
    send_json(res, sample_json(smp), 201);
  }

  void delete_sample(const std::string& sid, const std::string& sample, httplib::Response& res) {
    auto s = find_session(sid);
    s->session.remove_sample(sample);
    send_json(res, {{"removed", sample}});
  }

  void train(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    const json body = parse_body(req);
    const std::string kind = body.value("kind", std::string("classifier"));
    if (kind == "segmenter") return train_segmenter(s, body, res);
    if (kind != "classifier") fail(ErrorKind::invalid_argument, "unknown job kind " + kind);

    ClsTrainConfig tc = cfg.train_defaults;
    tc.use_masks = body.value("use_masks", true);
    tc.epochs = body.value("epochs", tc.epochs);
    tc.seed = body.value("seed", tc.seed);
    if (body.contains("background_suppression_prob")) {
      tc.background_suppression_prob = body["background_suppression_prob"].get<double>();
    }

    auto job = std::make_shared<Job>();
    job->id = "j-" + random_token(8);
    job->session_id = s->id;
    job->kind = "classifier";
    job->created_at = now_ms();
    std::shared_ptr<const SessionState> st;
    {
      std::lock_guard lock(s->mu);
      if (!s->running_job.empty()) fail(ErrorKind::conflict, "training job " + s->running_job + " already running");
      st = s->session.snapshot();
      check_trainable(st->teaching_set, tc);
      if (st->phase == Phase::assessing) s->session.set_phase(Phase::teaching);
      s->session.set_phase(Phase::training);
      s->running_job = job->id;
    }
    register_job(job);
    spawn([this, s, job, st, tc]() mutable { run_classifier_job(s, job, st->teaching_set, tc); });
    send_json(res, job->to_json(), 202);
  }

  void train_segmenter(const std::shared_ptr<ApiSession>& s, const json& body, httplib::Response& res) {
    if (!body.contains("manifest")) fail(ErrorKind::invalid_argument, "segmenter job needs a 'manifest' path");
    const DatasetManifest manifest = load_manifest(body["manifest"].get<std::string>());
    SegTrainConfig tc;
    tc.epochs = body.value("epochs", tc.epochs);
    tc.seed = body.value("seed", tc.seed);
    tc.model.in_channels = body.value("channels", 4);
    tc.model.resolution = body.value("resolution", tc.model.resolution);
    if (tc.model.in_channels != 3 && tc.model.in_channels != 4) fail(ErrorKind::invalid_argument, "channels must be 3 or 4");

    auto job = std::make_shared<Job>();
    job->id = "j-" + random_token(8);
    job->session_id = s->id;
    job->kind = "segmenter";
    job->created_at = now_ms();
    {
      std::lock_guard lock(jobs_mu);
      if (!running_segmenter_job.empty()) fail(ErrorKind::conflict, "segmenter job " + running_segmenter_job + " already running");
      running_segmenter_job = job->id;
    }
    register_job(job);
    spawn([this, s, job, manifest, tc]() mutable { run_segmenter_job(s, job, manifest, tc); });
    send_json(res, job->to_json(), 202);
  }

  void register_job(const std::shared_ptr<Job>& job) {
    std::lock_guard lock(jobs_mu);
    jobs[job->id] = job;
    ++active_jobs;
  }

  void spawn(std::function<void()> fn) {
    std::lock_guard lock(jobs_mu);
    workers.emplace_back([this, fn = std::move(fn)] {
      fn();
      std::lock_guard l(jobs_mu);
      --active_jobs;
      jobs_cv.notify_all();
    });
  }

  /// Publishes progress when it advanced by at least a percent; never goes backwards.
  static std::function<void(double)> progress_reporter(const std::shared_ptr<ApiSession>& s, const std::shared_ptr<Job>& job) {
    return [s, job](double p) {
      p = std::clamp(p, 0.0, 1.0);
      {
        std::lock_guard lock(job->mu);
        if (p < 1.0 && p < job->progress + 0.01) return;
        if (p <= job->progress && job->progress > 0.0) return;
        job->progress = p;
      }
      s->events.publish("job_progress", {{"job_id", job->id}, {"kind", job->kind}, {"progress", p}, {"status", "running"}});
    };
  }

  void set_running(const std::shared_ptr<ApiSession>& s, const std::shared_ptr<Job>& job) {
    {
      std::lock_guard lock(job->mu);
      job->status = "running";
    }
    s->events.publish("job_progress", {{"job_id", job->id}, {"kind", job->kind}, {"progress", 0.0}, {"status", "running"}});
  }

  void finish_job(const std::shared_ptr<ApiSession>& s, const std::shared_ptr<Job>& job, bool ok, json report,
                  const std::string& error) {
    double progress;
    {
      std::lock_guard lock(job->mu);
      job->status = ok ? "done" : "failed";
      if (ok) job->progress = 1.0;
      job->report = std::move(report);
      job->error = error;
      progress = job->progress;
    }
    json ev{{"job_id", job->id}, {"kind", job->kind}, {"progress", progress}, {"status", ok ? "done" : "failed"}};
    if (!ok) ev["error"] = error;
    s->events.publish("job_progress", ev);
  }

  void run_classifier_job(const std::shared_ptr<ApiSession>& s, const std::shared_ptr<Job>& job, const TeachingSet& set,
                          ClsTrainConfig tc) {
    set_running(s, job);
    tc.progress = progress_reporter(s, job);
    try {
      const ClsTrainResult r = train_classifier(set, tc);
      json report = to_json(r.report);
      report["fingerprint"] = r.model->fingerprint;
      if (!cfg.model_dir.empty()) {
        const fs::path dir = cfg.model_dir / "classifiers" / job->id;
        save_classifier(*r.model, dir, &r.report);
        report["model_dir"] = dir.string();
      }
      s->session.set_snapshot(r.model);
      s->session.set_phase(Phase::assessing);
      s->diversity.set_model(r.model);
      {
        std::lock_guard lock(s->mu);
        s->running_job.clear();
      }
      finish_job(s, job, true, report, {});
    } catch (const std::exception& e) {
      // Back to teaching through the regular cycle.
      try {
        s->session.set_phase(Phase::assessing);
        s->session.set_phase(Phase::teaching);
      } catch (const std::exception&) {
      }
      {
        std::lock_guard lock(s->mu);
        s->running_job.clear();
      }
      finish_job(s, job, false, nullptr, e.what());
    }
  }

  void run_segmenter_job(const std::shared_ptr<ApiSession>& s, const std::shared_ptr<Job>& job,
                         const DatasetManifest& manifest, SegTrainConfig tc) {
    set_running(s, job);
    tc.progress = progress_reporter(s, job);
    try {
      SegTrainResult r = train_object_segmenter(manifest, tc);
      json report = to_json(r.report);
      if (!cfg.model_dir.empty()) {
        r.model.save(cfg.model_dir / "segmenter");
        report["model_dir"] = (cfg.model_dir / "segmenter").string();
      }
      if (tc.model.in_channels == 4) live->set_object_segmenter(std::make_shared<const ObjectSegmenter>(std::move(r.model)));
      finish_job(s, job, true, report, {});
    } catch (const std::exception& e) {
      finish_job(s, job, false, nullptr, e.what());
    }
    std::lock_guard lock(jobs_mu);
    running_segmenter_job.clear();
  }

  void assess_frame(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    const json body = parse_body(req);
    const auto st = s->session.snapshot();
    if (!st->latest_snapshot) fail(ErrorKind::conflict, "no trained model; train first");
    const Frame frame = decode_frame(body);
    std::optional<CategoryId> target;
    if (body.contains("target") && !body["target"].is_null()) target = body["target"].get<int>();
    const ClassifierSnapshot& model = *st->latest_snapshot;
    const AssessmentResult a = assess(model, frame, target);
    json out = prediction_json(model, a.prediction);
    out["target"] = a.target;
    out["latency_ms"] = a.latency_ms;
    out["model_fingerprint"] = model.fingerprint;
    out["saliency"] = b64_png(saliency_mask(a.saliency.values));
    out["overlay"] = b64_png(overlay(frame, a.saliency));
    s->events.publish("assessment", out);
    send_json(res, out);
  }

  void export_bundle(const std::string& sid, httplib::Response& res) {
    auto s = find_session(sid);
    json out = export_session_bundle(s->session.snapshot()->teaching_set);
    out["session_id"] = s->id;
    send_json(res, out);
  }

  void events(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(sid);
    std::optional<std::uint64_t> since;
    try {
      if (req.has_param("since")) {
        since = std::stoull(req.get_param_value("since"));
      } else if (req.has_header("Last-Event-ID")) {
        since = std::stoull(req.get_header_value("Last-Event-ID"));
      }
    } catch (const std::exception&) {
      fail(ErrorKind::invalid_argument, "bad 'since' sequence number");
    }
    auto sub = s->events.subscribe(since);
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, sub](std::size_t, httplib::DataSink& sink) {
          if (stopping || sub->closed()) return false;
          const std::optional<Event> e = sub->next(std::chrono::milliseconds(250));
          if (stopping) return false;
          const std::string chunk = e ? format_sse(*e) : std::string(": keepalive\n\n");
          return sink.write(chunk.data(), chunk.size());
        },
        [s, sub](bool) { s->events.unsubscribe(sub); });
  }

  // -------------------------------------------------------------------------

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.kind()), kind_name(e.kind()), e.what());
      } catch (const json::exception& e) {
        send_error(res, 400, "bad_request", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
  }

  void routes() {
    server.Post("/sessions", guarded([this](const auto& req, auto& res) { create_session(req, res); }));
    server.Get(R"(/sessions/([^/]+))", guarded([this](const auto& req, auto& res) {
                 send_json(res, state_json(*find_session(req.matches[1])));
               }));
    server.Post(R"(/sessions/([^/]+)/categories)",
                guarded([this](const auto& req, auto& res) { add_category(req.matches[1], req, res); }));
    server.Post(R"(/sessions/([^/]+)/frames)",
                guarded([this](const auto& req, auto& res) { post_frame(req.matches[1], req, res); }));
    server.Post(R"(/sessions/([^/]+)/capture)",
                guarded([this](const auto& req, auto& res) { capture(req.matches[1], req, res); }));
    server.Delete(R"(/sessions/([^/]+)/samples/([^/]+))",
                  guarded([this](const auto& req, auto& res) { delete_sample(req.matches[1], req.matches[2], res); }));
    server.Post(R"(/sessions/([^/]+)/train)",
                guarded([this](const auto& req, auto& res) { train(req.matches[1], req, res); }));
    server.Get(R"(/jobs/([^/]+))",
               guarded([this](const auto& req, auto& res) { send_json(res, find_job(req.matches[1])->to_json()); }));
    server.Post(R"(/sessions/([^/]+)/assess)",
                guarded([this](const auto& req, auto& res) { assess_frame(req.matches[1], req, res); }));
    server.Get(R"(/sessions/([^/]+)/export)",
               guarded([this](const auto& req, auto& res) { export_bundle(req.matches[1], res); }));
    server.Get(R"(/sessions/([^/]+)/events)",
               guarded([this](const auto& req, auto& res) { events(req.matches[1], req, res); }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 413) {
        send_error(res, 413, "too_large", "request body exceeds MAX_FRAME_BYTES");
      } else if (res.body.empty()) {
        send_error(res, res.status, "http", httplib::status_message(res.status));
      }
    });
  }

  int bind() {
    if (cfg.port == 0) {
      bound_port = server.bind_to_any_port(cfg.host);
    } else if (server.bind_to_port(cfg.host, cfg.port)) {
      bound_port = cfg.port;
    }
    if (bound_port < 0) fail(ErrorKind::io, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    return bound_port;
  }

  void shutdown() {
    if (stopping.exchange(true)) return;
    {
      std::lock_guard lock(sessions_mu);
      for (auto& [id, s] : sessions) s->events.close_all();
    }
    server.stop();
    if (server_thread.joinable()) server_thread.join();
    std::vector<std::thread> ws;
    {
      std::lock_guard lock(jobs_mu);
      ws.swap(workers);
    }
    for (std::thread& t : ws) t.join();
  }
};

// ---------------------------------------------------------------------------

ServiceConfig config_from_env(ServiceConfig base) {
  if (const char* v = std::getenv("PORT"); v && *v) base.port = std::atoi(v);
  if (const char* v = std::getenv("MODEL_DIR"); v && *v) base.model_dir = v;
  if (const char* v = std::getenv("MAX_FRAME_BYTES"); v && *v) base.max_frame_bytes = std::strtoull(v, nullptr, 10);
  return base;
}

Service::Service(ServiceConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Service::~Service() { stop(); }

int Service::start() {
  const int port = impl_->bind();
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_) impl_->shutdown();
}

int Service::port() const { return impl_->bound_port; }

void Service::wait_for_jobs() {
  std::unique_lock lock(impl_->jobs_mu);
  impl_->jobs_cv.wait(lock, [this] { return impl_->active_jobs == 0; });
}

// ---------------------------------------------------------------------------

namespace {

fs::path fresh_temp_dir() {
  const fs::path dir = fs::temp_directory_path() / ("imt-" + random_token(8));
  fs::create_directories(dir);
  return dir;
}

struct TempDir {
  fs::path path = fresh_temp_dir();
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

json export_session_bundle(const TeachingSet& set) {
  TempDir tmp;
  export_session(set, tmp.path);
  json out;
  out["session"] = json::parse(std::ifstream(tmp.path / "session.json"));
  json files = json::object();
  for (const auto& entry : fs::recursive_directory_iterator(tmp.path)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    files[fs::relative(entry.path(), tmp.path).generic_string()] = base64_encode(read_file_bytes(entry.path()));
  }
  out["files"] = files;
  return out;
}

TeachingSet import_session_bundle(const json& bundle) {
  if (!bundle.contains("session") || !bundle.contains("files")) {
    fail(ErrorKind::invalid_argument, "bundle needs 'session' and 'files'");
  }
  TempDir tmp;
  {
    std::ofstream(tmp.path / "session.json") << bundle["session"].dump();
  }
  for (const auto& [rel, data] : bundle["files"].items()) {
    const fs::path p = fs::path(rel).lexically_normal();
    if (p.is_absolute() || p.empty() || *p.begin() == "..") fail(ErrorKind::invalid_argument, "bad bundle path " + rel);
    fs::create_directories((tmp.path / p).parent_path());
    write_file_bytes(tmp.path / p, base64_decode(data.get<std::string>()));
  }
  return import_session(tmp.path);
}

}  // namespace imt
