#include <doctest.h>

#include <atomic>
#include <chrono>
#include <map>
#include <random>
#include <thread>

#include <httplib.h>

#include "helpers.hpp"
#include "imt/classifier.hpp"
#include "imt/codec.hpp"
#include "imt/service.hpp"
#include "imt/synth.hpp"

using namespace imt;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

struct Server {
  Service service;
  int port;
  explicit Server(ServiceConfig cfg = make_config()) : service(std::move(cfg)), port(service.start()) {}
  ~Server() { service.stop(); }

  static ServiceConfig make_config() {
    ServiceConfig c;
    c.port = 0;
    return c;
  }
};

struct Reply {
  int status = 0;
  json body;
};

struct Api {
  httplib::Client cli;
  explicit Api(int port) : cli("127.0.0.1", port) {
    cli.set_read_timeout(60, 0);
    cli.set_write_timeout(60, 0);
  }

  static Reply wrap(const httplib::Result& r) {
    REQUIRE(r);
    Reply out{r->status, json()};
    if (!r->body.empty()) out.body = json::parse(r->body);
    return out;
  }
  Reply get(const std::string& p) { return wrap(cli.Get(p)); }
  Reply post(const std::string& p, const json& body) { return wrap(cli.Post(p, body.dump(), "application/json")); }
  Reply del(const std::string& p) { return wrap(cli.Delete(p)); }
};

std::string png64(const Frame& f) { return base64_encode(encode_png(f)); }

std::vector<SynthScene> scenes(int n, std::uint64_t seed) {
  SynthOptions o;
  o.size = 64;
  o.num_classes = 2;
  return generate_scenes(n, seed, o);
}

/// Reads the SSE stream from `since` until `stop` says so or the deadline passes.
std::vector<json> read_stream(int port, const std::string& sid, std::uint64_t since,
                              const std::function<bool(const std::vector<json>&)>& stop,
                              std::chrono::milliseconds per_chunk_delay = 0ms) {
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(20, 0);
  std::vector<json> events;
  std::string buffer;
  const auto deadline = std::chrono::steady_clock::now() + 30s;
  cli.Get("/sessions/" + sid + "/events?since=" + std::to_string(since), [&](const char* data, std::size_t len) {
    buffer.append(data, len);
    std::size_t end;
    while ((end = buffer.find("\n\n")) != std::string::npos) {
      const std::string block = buffer.substr(0, end);
      buffer.erase(0, end + 2);
      const auto pos = block.find("data: ");
      if (pos != std::string::npos) events.push_back(json::parse(block.substr(pos + 6)));
    }
    if (per_chunk_delay.count() > 0) std::this_thread::sleep_for(per_chunk_delay);
    return !stop(events) && std::chrono::steady_clock::now() < deadline;
  });
  return events;
}

std::string new_session(Api& api, int categories) {
  const Reply r = api.post("/sessions", json::object());
  REQUIRE(r.status == 201);
  const std::string sid = r.body["session_id"];
  for (int i = 0; i < categories; ++i) {
    REQUIRE(api.post("/sessions/" + sid + "/categories", {{"id", i}, {"name", "c" + std::to_string(i)}}).status == 201);
  }
  return sid;
}

Reply wait_job(Api& api, const std::string& job) {
  for (int i = 0; i < 1200; ++i) {
    Reply r = api.get("/jobs/" + job);
    if (r.body["status"] == "done" || r.body["status"] == "failed") return r;
    std::this_thread::sleep_for(100ms);
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_SUITE("service api") {
  TEST_CASE("session lifecycle and error mapping") {
    Server s;
    Api api(s.port);
    const Reply created = api.post("/sessions", json::object());
    CHECK(created.status == 201);
    const std::string sid = created.body["session_id"];
    CHECK_FALSE(sid.empty());
    const Reply other = api.post("/sessions", json::object());
    CHECK(other.body["session_id"] != sid);

    const Reply st = api.get("/sessions/" + sid);
    CHECK(st.status == 200);
    CHECK(st.body["phase"] == "teaching");
    CHECK(st.body["projection_available"] == false);

    CHECK(api.get("/sessions/nope").status == 404);
    CHECK(api.get("/jobs/nope").status == 404);
    CHECK(api.post("/sessions/" + sid + "/categories", {{"name", "cup"}}).status == 201);
    CHECK(api.post("/sessions/" + sid + "/categories", {{"id", 0}, {"name", "dup"}}).status == 422);

    const Reply noframe = api.post("/sessions/" + sid + "/capture", {{"condition", "in_situ"}});
    CHECK(noframe.status == 422);
    CHECK(noframe.body["error"] == "invalid_argument");

    CHECK(api.post("/sessions/" + sid + "/frames", {{"image", "bm90IGEgcG5n"}}).status == 422);
    CHECK(api.post("/sessions/" + sid + "/frames", {{"nothing", 1}}).status == 422);
    CHECK(api.post("/sessions/" + sid + "/capture", {{"condition", "sideways"}}).status == 422);
    CHECK(api.del("/sessions/" + sid + "/samples/s99").status == 404);
    CHECK(api.post("/sessions/" + sid + "/assess", {{"image", png64(testing::solid_frame(32, 32, {1, 2, 3}))}}).status ==
          409);

    const Reply one_cat = api.post("/sessions/" + sid + "/train", json::object());
    CHECK(one_cat.status == 422);
    CHECK(one_cat.body["message"].get<std::string>().find("need >= 2 categories") != std::string::npos);
  }

  TEST_CASE("frames give masks and a live point; capture emits one sample_added") {
    Server s;
    Api api(s.port);
    const std::string sid = new_session(api, 2);
    const auto sc = scenes(4, 1);

    const Reply first = api.post("/sessions/" + sid + "/frames", {{"image", png64(sc[0].image)}, {"category_id", 0}});
    REQUIRE(first.status == 200);
    CHECK(first.body["status"] == "projection unavailable");
    CHECK(first.body["live_point"].is_null());
    const Mask mask = decode_mask_png(base64_decode(first.body["mask"].get<std::string>()));
    CHECK(mask.width == 64);
    CHECK(decode_mask_png(base64_decode(first.body["hand_mask"].get<std::string>())).height == 64);

    const Reply cap = api.post("/sessions/" + sid + "/capture", {{"condition", "in_situ"}});
    REQUIRE(cap.status == 201);
    const std::string sample_id = cap.body["sample_id"];
    CHECK(cap.body["has_object_mask"] == true);
    CHECK(cap.body["category_id"] == 0);

    const auto events = read_stream(s.port, sid, 0, [](const std::vector<json>& ev) {
      return std::any_of(ev.begin(), ev.end(), [](const json& e) { return e["type"] == "diversity_report"; });
    });
    int added = 0;
    for (const json& e : events) {
      if (e["type"] == "sample_added") {
        ++added;
        CHECK(e["payload"]["sample_id"] == sample_id);
      }
    }
    CHECK(added == 1);
    for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i]["seq"] > events[i - 1]["seq"]);

    // Projection fitted by now: frames carry a live point with a novelty value.
    const Reply second = api.post("/sessions/" + sid + "/frames", {{"image", png64(sc[0].image)}});
    CHECK(second.body["status"] == "ok");
    REQUIRE(second.body["live_point"].is_object());
    CHECK(second.body["live_point"]["novelty"].get<double>() == doctest::Approx(0.0).epsilon(1e-6));
    const Reply empty_class = api.post("/sessions/" + sid + "/frames", {{"image", png64(sc[1].image)}, {"category_id", 1}});
    CHECK(empty_class.body["live_point"]["novelty"].is_null());
  }

  TEST_CASE("burst of 100 frames to a slow client keeps the freshest point") {
    Server s;
    Api api(s.port);
    const std::string sid = new_session(api, 1);
    const auto sc = scenes(2, 2);
    REQUIRE(api.post("/sessions/" + sid + "/frames", {{"image", png64(sc[0].image)}}).status == 200);
    const std::uint64_t start = api.get("/sessions/" + sid).body["last_seq"];

    std::atomic<std::uint64_t> last_sent{0};
    std::thread sender([&] {
      Api local(s.port);
      for (int i = 0; i < 100; ++i) local.post("/sessions/" + sid + "/frames", {{"image", png64(sc[i % 2].image)}});
      last_sent = local.get("/sessions/" + sid).body["last_seq"].get<std::uint64_t>();
    });
    std::vector<json> got;
    std::thread reader([&] {
      got = read_stream(
          s.port, sid, start,
          [&](const std::vector<json>& ev) { return last_sent != 0 && !ev.empty() && ev.back()["seq"] == last_sent.load(); },
          20ms);
    });
    sender.join();
    reader.join();
    REQUIRE_FALSE(got.empty());
    int points = 0;
    for (const json& e : got) points += e["type"] == "live_point";
    CHECK(points <= 100);
    CHECK(got.back()["seq"] == last_sent.load());
    CHECK(got.back()["type"] == "live_point");
  }

  TEST_CASE("training job, 409 on a second request, assessment, export round trip") {
    Server s;
    Api api(s.port);
    const std::string sid = new_session(api, 2);
    const auto sc = scenes(12, 3);
    for (const auto& scene : sc) {
      REQUIRE(api.post("/sessions/" + sid + "/capture", {{"condition", "contour"},
                                                         {"category_id", scene.spec.label},
                                                         {"image", png64(scene.image)},
                                                         {"mask", base64_encode(encode_png(scene.object_mask))}})
                  .status == 201);
    }
    const json bundle = api.get("/sessions/" + sid + "/export").body;
    const TeachingSet exported = import_session_bundle(bundle);
    REQUIRE(exported.samples.size() == 12);

    const Reply job = api.post("/sessions/" + sid + "/train", {{"epochs", 4}, {"seed", 5}});
    REQUIRE(job.status == 202);
    const Reply again = api.post("/sessions/" + sid + "/train", {{"epochs", 1}});
    CHECK(again.status == 409);
    CHECK(api.get("/sessions/" + sid).body["phase"] == "training");

    const Reply done = wait_job(api, job.body["job_id"]);
    REQUIRE(done.body["status"] == "done");
    CHECK(done.body["progress"] == 1.0);
    CHECK(api.get("/sessions/" + sid).body["phase"] == "assessing");

    // The rejected request left the job alone: same report as a direct run on the same data.
    ClsTrainConfig direct;
    direct.epochs = 4;
    direct.seed = 5;
    direct.use_masks = true;
    const auto ref = train_classifier(exported, direct);
    CHECK(done.body["report"]["epoch_loss"].get<std::vector<double>>() == ref.report.epoch_loss);
    CHECK(done.body["report"]["fingerprint"] == ref.model->fingerprint);

    const auto events = read_stream(s.port, sid, 0, [&](const std::vector<json>& ev) {
      return std::any_of(ev.begin(), ev.end(), [](const json& e) {
        return e["type"] == "job_progress" && e["payload"]["status"] == "done";
      });
    });
    double last = -1.0;
    int progress_events = 0;
    for (const json& e : events) {
      if (e["type"] != "job_progress") continue;
      ++progress_events;
      const double p = e["payload"]["progress"];
      CHECK(p >= last);
      last = p;
    }
    CHECK(progress_events >= 2);
    CHECK(last == 1.0);

    const Reply a = api.post("/sessions/" + sid + "/assess", {{"image", png64(sc[0].image)}});
    REQUIRE(a.status == 200);
    double sum = 0;
    for (const json& p : a.body["probabilities"]) sum += p["p"].get<double>();
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(a.body["target"] == a.body["top"]);
    CHECK(decode_mask_png(base64_decode(a.body["saliency"].get<std::string>())).width == 64);
    CHECK_FALSE(base64_decode(a.body["overlay"].get<std::string>()).empty());
    const Reply b = api.post("/sessions/" + sid + "/assess", {{"image", png64(sc[0].image)}, {"target", 1}});
    CHECK(b.body["target"] == 1);
    CHECK(b.body["probabilities"] == a.body["probabilities"]);

    // Capturing again returns to teaching.
    REQUIRE(api.post("/sessions/" + sid + "/capture", {{"condition", "naive"}, {"image", png64(sc[1].image)}, {"category_id", 1}})
                .status == 201);
    CHECK(api.get("/sessions/" + sid).body["phase"] == "teaching");
  }

  TEST_CASE("api sequences keep counts consistent with a replay oracle") {
    Server s;
    Api api(s.port);
    const std::string sid = new_session(api, 3);
    const auto sc = scenes(3, 4);
    REQUIRE(api.post("/sessions/" + sid + "/frames", {{"image", png64(sc[0].image)}}).status == 200);
    std::mt19937_64 rng(10);
    std::map<std::string, int> oracle;
    for (int step = 0; step < 40; ++step) {
      const auto r = rng() % 10;
      if (r < 6 || oracle.empty()) {
        const int cat = static_cast<int>(rng() % 4);  // 3 is unknown
        const Reply rep = api.post("/sessions/" + sid + "/capture",
                                   {{"condition", rng() % 2 ? "naive" : "in_situ"}, {"category_id", cat}});
        if (cat == 3) {
          CHECK(rep.status == 422);
        } else {
          REQUIRE(rep.status == 201);
          oracle[rep.body["sample_id"]] = cat;
        }
      } else if (r < 9) {
        auto it = oracle.begin();
        std::advance(it, static_cast<long>(rng() % oracle.size()));
        CHECK(api.del("/sessions/" + sid + "/samples/" + it->first).status == 200);
        oracle.erase(it);
      } else {
        CHECK(api.del("/sessions/" + sid + "/samples/none").status == 404);
      }
      const json st = api.get("/sessions/" + sid).body;
      std::map<int, int> expected{{0, 0}, {1, 0}, {2, 0}};
      for (auto& [id, c] : oracle) ++expected[c];
      for (auto& [c, n] : expected) REQUIRE(st["counts"][std::to_string(c)] == n);
      REQUIRE(st["samples"].size() == oracle.size());
    }
  }

  TEST_CASE("oversized bodies are rejected with 413") {
    ServiceConfig cfg = Server::make_config();
    cfg.max_frame_bytes = 2000;
    Server s(cfg);
    Api api(s.port);
    const std::string sid = new_session(api, 1);
    std::mt19937_64 rng(1);
    const Reply big = api.post("/sessions/" + sid + "/frames", {{"image", png64(testing::noise_frame(200, 200, rng))}});
    CHECK(big.status == 413);
  }

  TEST_CASE("config from environment") {
    ::setenv("PORT", "9123", 1);
    ::setenv("MAX_FRAME_BYTES", "777", 1);
    const ServiceConfig c = config_from_env();
    CHECK(c.port == 9123);
    CHECK(c.max_frame_bytes == 777);
    ::unsetenv("PORT");
    ::unsetenv("MAX_FRAME_BYTES");
  }
}
