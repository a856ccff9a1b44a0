#include "imt/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "imt/bench.hpp"
#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "imt/events.hpp"
#include "imt/live.hpp"
#include "imt/saliency.hpp"

namespace imt {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// Collects named boolean checks for the property criterion.
struct Checks {
  json items = json::array();
  int failed = 0;

  void add(const std::string& name, bool ok, const std::string& detail = {}) {
    items.push_back({{"check", name}, {"passed", ok}, {"detail", detail}});
    if (!ok) ++failed;
  }
};

Frame random_frame(int w, int h, std::mt19937_64& rng) {
  Frame f(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(d(rng));
  return f;
}

Mask rect_mask(int w, int h, int x0, int y0, int rw, int rh) {
  Mask m(w, h);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) m.at(x, y) = 255;
  }
  return m;
}

// ---------------------------------------------------------------------------

struct Context {
  fs::path work_dir;
  std::optional<SegBenchResult> seg;  // shared by criteria 1 and 2

  const SegBenchResult& segmentation() {
    if (!seg) {
      SegBenchConfig cfg;
      cfg.work_dir = work_dir / "segbench";
      seg = bench_segmentation(cfg);
    }
    return *seg;
  }
};

void criterion_seg_direction(Context& ctx, CriterionResult& r) {
  const SegBenchResult& b = ctx.segmentation();
  r.details = to_json(b);
  const bool ok = b.full.heldout_mean_iou >= 0.55 && b.gap >= 0.10;
  r.passed = ok;
  r.summary = "4-ch IoU " + fmt(b.full.heldout_mean_iou) + " (>= 0.55), 3-ch IoU " + fmt(b.ablation.heldout_mean_iou) +
              ", gap " + fmt(b.gap) + " (>= 0.10)";
}

void criterion_sensitivity(Context& ctx, CriterionResult& r) {
  const SegBenchResult& b = ctx.segmentation();
  const SensitivityResult s = conditioning_sensitivity(b.full_model, b.heldout, 50);
  r.details = to_json(s);
  r.passed = s.cases.size() == 50 && s.flip_rate >= 0.70;
  r.summary = "flipped " + std::to_string(s.flipped) + "/" + std::to_string(s.cases.size()) + " = " + fmt(s.flip_rate) +
              " (>= 0.70 of 50)";
}

void criterion_spurious(Context&, CriterionResult& r) {
  const auto t0 = Clock::now();
  const SpuriousBenchResult s = bench_spurious(SpuriousBenchConfig{});
  const double secs = seconds_since(t0);
  r.details = to_json(s);
  const std::size_t n = s.unmasked.explanation_iou.size();
  r.passed = n == 50 && s.confident_off_object >= 0.5 &&
             s.masked.mean_explanation_iou > s.unmasked.mean_explanation_iou && secs <= 300.0;
  r.summary = "confident-off-object " + fmt(s.confident_off_object) + " (>= 0.5), explanation IoU masked " +
              fmt(s.masked.mean_explanation_iou) + " vs unmasked " + fmt(s.unmasked.mean_explanation_iou) + " over " +
              std::to_string(n) + " frames";
}

void criterion_conditions(Context& ctx, CriterionResult& r) {
  ConditionsBenchConfig cfg;
  cfg.work_dir = ctx.work_dir / "conditions";
  const std::vector<ConditionRun> runs = bench_conditions(cfg);
  std::map<Condition, ConditionRun> by;
  json rows = json::array();
  for (const ConditionRun& c : runs) {
    by[c.condition] = c;
    rows.push_back(to_json(c));
  }
  r.details = {{"runs", rows}};
  const auto& naive = by.at(Condition::naive);
  const auto& click = by.at(Condition::click);
  const auto& contour = by.at(Condition::contour);
  const auto& situ = by.at(Condition::in_situ);
  const bool time_order = situ.total_seconds < click.total_seconds && click.total_seconds < contour.total_seconds;
  bool naive_min = true;
  double lo = 1.0, hi = 0.0;
  bool same_frames = true;
  for (const ConditionRun& c : runs) {
    if (c.condition != Condition::naive && c.explanation_iou <= naive.explanation_iou) naive_min = false;
    lo = std::min(lo, c.accuracy);
    hi = std::max(hi, c.accuracy);
    same_frames = same_frames && c.frames_fingerprint == naive.frames_fingerprint;
  }
  const double spread = hi - lo;
  r.details["accuracy_spread"] = spread;
  r.details["identical_frames"] = same_frames;
  r.passed = time_order && naive_min && spread <= 0.15 && same_frames;
  r.summary = "time in_situ " + fmt(situ.total_seconds, 1) + "s < click " + fmt(click.total_seconds, 0) +
              "s < contour " + fmt(contour.total_seconds, 0) + "s: " + (time_order ? "yes" : "no") +
              "; naive explanation IoU " + fmt(naive.explanation_iou) + " is minimum: " + (naive_min ? "yes" : "no") +
              "; accuracy spread " + fmt(spread) + " (<= 0.15)";
}

void criterion_diversity(Context&, CriterionResult& r) {
  json seeds = json::array();
  bool all = true;
  std::string parts;
  for (std::uint64_t seed : {1, 2, 3}) {
    DiversityBenchConfig cfg;
    cfg.seed = seed;
    const DiversityBenchResult b = bench_diversity(cfg);
    const double margin = b.diverse.accuracy - b.redundant.accuracy;
    const bool ok = margin >= 0.05 && b.diverse.diversity.overall > b.redundant.diversity.overall;
    all = all && ok;
    json j = to_json(b);
    j["seed"] = seed;
    j["passed"] = ok;
    seeds.push_back(j);
    if (!parts.empty()) parts += "; ";
    parts += "seed " + std::to_string(seed) + ": acc " + fmt(b.diverse.accuracy) + " vs " + fmt(b.redundant.accuracy) +
             ", diversity " + fmt(b.diverse.diversity.overall) + " vs " + fmt(b.redundant.diversity.overall);
  }
  r.details = {{"seeds", seeds}};
  r.passed = all;
  r.summary = parts;
}

void criterion_dataset(Context& ctx, CriterionResult& r) {
  SynthOptions opt;
  opt.size = 32;
  opt.images_per_participant = 12;
  const DatasetManifest m = generate_synthetic(170 * 12, 2024, false, ctx.work_dir / "manifest170", opt);
  const DatasetManifest again = load_manifest(ctx.work_dir / "manifest170" / "manifest.json");
  const std::vector<std::string> people = m.participants();

  const SplitSpec a = split_by_participant(m, 0.8, 42);
  const SplitSpec b = split_by_participant(again, 0.8, 42);
  const std::size_t train_images = select_records(m, a.train).size();
  const std::set<std::string> train(a.train.begin(), a.train.end());
  std::size_t overlap = 0;
  for (const std::string& p : a.test) overlap += train.count(p);

  bool other_seeds_ok = true;
  for (std::uint64_t seed : {0, 1, 7, 99}) {
    const SplitSpec s = split_by_participant(m, 0.8, seed);
    std::set<std::string> tr(s.train.begin(), s.train.end());
    for (const std::string& p : s.test) other_seeds_ok = other_seeds_ok && !tr.count(p);
    other_seeds_ok = other_seeds_ok && s.train.size() == 136 && s.train.size() + s.test.size() == 170;
  }
  const bool deterministic = a.train == b.train && a.test == b.test && m.fingerprint == again.fingerprint;

  r.details = {{"records", m.records.size()},
               {"participants", people.size()},
               {"train_participants", a.train.size()},
               {"test_participants", a.test.size()},
               {"train_images", train_images},
               {"overlap", overlap},
               {"deterministic", deterministic},
               {"fingerprint", m.fingerprint}};
  r.passed = m.records.size() == 2040 && people.size() == 170 && a.train.size() == 136 && train_images == 1632 &&
             overlap == 0 && deterministic && other_seeds_ok;
  r.summary = std::to_string(m.records.size()) + " records, " + std::to_string(people.size()) + " participants -> " +
              std::to_string(a.train.size()) + " train participants / " + std::to_string(train_images) +
              " train images, overlap " + std::to_string(overlap) + ", deterministic: " + (deterministic ? "yes" : "no");
}

void criterion_properties(Context&, CriterionResult& r) {
  const auto t0 = Clock::now();
  Checks c;
  std::mt19937_64 rng(2718);

  // IoU oracle cases.
  {
    const Mask a = rect_mask(32, 32, 4, 4, 10, 10);
    const Mask shifted = rect_mask(32, 32, 9, 4, 10, 10);
    const Mask apart = rect_mask(32, 32, 20, 20, 10, 10);
    c.add("iou identical = 1", std::abs(evaluate_iou(a, a) - 1.0) < 1e-12);
    c.add("iou disjoint = 0", evaluate_iou(a, apart) == 0.0);
    const double v = evaluate_iou(a, shifted);
    c.add("iou shifted half = 50/150", std::abs(v - 50.0 / 150.0) < 1e-9, fmt(v, 6));
  }

  // Saliency range and the constant-map rule; softmax normalization.
  {
    ClsTrainConfig cfg;
    cfg.seed = 3;
    const auto model = make_untrained_classifier(shape_categories(3), cfg);
    bool in_range = true;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Frame f = random_frame(48 + 8 * (i % 3), 40 + 8 * (i % 4), rng);
      const Prediction p = predict(*model, f);
      double sum = 0.0;
      for (double q : p.probabilities) sum += q;
      worst = std::max(worst, std::abs(sum - 1.0));
      if (i < 5) {
        const AssessmentResult a = assess(*model, f);
        for (float v : a.saliency.values.values) in_range = in_range && v >= 0.0f && v <= 1.0f;
        in_range = in_range && a.saliency.values.width == f.width && a.saliency.values.height == f.height;
      }
    }
    c.add("softmax |sum-1| < 1e-6", worst < 1e-6, fmt(worst, 9));
    c.add("saliency in [0,1] at frame size", in_range);
    const FloatMap flat = normalize_saliency(FloatMap(20, 10, 0.37f));
    c.add("constant saliency -> zeros",
          std::all_of(flat.values.begin(), flat.values.end(), [](float v) { return v == 0.0f; }));
  }

  // Dispersion cases and invariances.
  {
    const std::vector<Point2> one{{3, 3}}, dup{{1, 1}, {1, 1}, {1, 1}}, pair{{0, 0}, {0, 2}}, tri{{0, 0}, {3, 0}, {0, 4}};
    c.add("dispersion single point = 0", dispersion(one) == 0.0);
    c.add("dispersion duplicates = 0", dispersion(dup) == 0.0);
    c.add("dispersion pair = 2.0", std::abs(dispersion(pair) - 2.0) < 1e-12);
    c.add("dispersion 3-4-5 = 4.0", std::abs(dispersion(tri) - 4.0) < 1e-12);
    bool perm = true, trans = true, scale = true;
    std::normal_distribution<double> g(0.0, 3.0);
    for (int t = 0; t < 50; ++t) {
      std::vector<Point2> pts(2 + t % 9);
      for (auto& p : pts) p = {g(rng), g(rng)};
      const double d = dispersion(pts);
      auto shuffled = pts;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      perm = perm && std::abs(dispersion(shuffled) - d) < 1e-9;
      const double dx = g(rng), dy = g(rng), s = std::abs(g(rng));
      auto moved = pts, scaled = pts;
      for (auto& p : moved) p = {p.x + dx, p.y + dy};
      for (auto& p : scaled) p = {p.x * s, p.y * s};
      trans = trans && std::abs(dispersion(moved) - d) < 1e-9;
      scale = scale && std::abs(dispersion(scaled) - s * d) < 1e-9 * std::max(1.0, s * d);
    }
    c.add("dispersion permutation-invariant", perm);
    c.add("dispersion translation-invariant", trans);
    c.add("dispersion scales with s", scale);
  }

  // Projection orthonormality, determinism and the rank-1 case.
  {
    std::normal_distribution<float> g(0.0f, 1.0f);
    double worst = 0.0;
    bool repeat = true;
    for (int t = 0; t < 10; ++t) {
      std::vector<std::vector<float>> e(5 + 7 * t, std::vector<float>(12 + t));
      for (auto& v : e) {
        for (auto& x : v) x = g(rng);
      }
      const Projection2D p = fit_projection(e);
      const Projection2D q = fit_projection(e);
      auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
      };
      worst = std::max({worst, std::abs(dot(p.basis[0], p.basis[0]) - 1.0), std::abs(dot(p.basis[1], p.basis[1]) - 1.0),
                        std::abs(dot(p.basis[0], p.basis[1]))});
      repeat = repeat && p.basis == q.basis;
    }
    c.add("projection basis orthonormal <= 1e-6", worst <= 1e-6, fmt(worst, 12));
    c.add("projection repeat fits identical", repeat);

    std::vector<float> dir(10), base(10);
    for (int i = 0; i < 10; ++i) {
      dir[i] = g(rng);
      base[i] = g(rng);
    }
    std::vector<std::vector<float>> line;
    for (int i = 0; i < 30; ++i) {
      const float s = g(rng) * 4.0f;
      std::vector<float> v(10);
      for (int k = 0; k < 10; ++k) v[k] = base[k] + s * dir[k];
      line.push_back(v);
    }
    const Projection2D p = fit_projection(line);
    c.add("rank-1 explained variance = 1", std::abs(p.explained[0] - 1.0) <= 1e-6, fmt(p.explained[0], 9));
  }

  // Session counts against a replay of its own event log under fuzzed sequences.
  {
    bool consistent = true;
    int errors_seen = 0;
    for (int round = 0; round < 20; ++round) {
      Session session;
      std::map<std::string, CategoryId> log;  // surviving samples rebuilt from events
      session.subscribe([&](const SessionEvent& ev) {
        if (ev.kind == SessionEvent::Kind::sample_added) {
          log[ev.sample_id] = ev.category_id;
        } else {
          log.erase(ev.sample_id);
        }
      });
      const int k = 2 + round % 3;
      for (int i = 0; i < k; ++i) session.add_category({i, "c" + std::to_string(i), {0, 0, 0}});
      auto frame = std::make_shared<const Frame>(random_frame(16, 16, rng));
      std::uniform_int_distribution<int> op(0, 9);
      for (int step = 0; step < 60; ++step) {
        const auto st = session.snapshot();
        const int o = op(rng);
        try {
          if (o < 6 || st->teaching_set.samples.empty()) {
            session.capture(frame, static_cast<int>(rng() % (k + 1)), Condition::naive);  // id k is unknown
          } else if (o < 9) {
            const auto& s = st->teaching_set.samples[rng() % st->teaching_set.samples.size()];
            session.remove_sample(s.sample_id);
          } else {
            session.remove_sample("missing");
          }
        } catch (const Error&) {
          ++errors_seen;
        }
        const auto now = session.snapshot();
        std::map<CategoryId, std::size_t> oracle;
        for (int i = 0; i < k; ++i) oracle[i] = 0;
        for (const auto& [id, cat] : log) ++oracle[cat];
        std::size_t total = 0;
        for (const auto& [cat, n] : counts_per_category(now->teaching_set)) total += n;
        consistent = consistent && oracle == counts_per_category(now->teaching_set) &&
                     total == now->teaching_set.samples.size() && total == log.size();
      }
    }
    c.add("counts match event-log replay (fuzzed)", consistent, std::to_string(errors_seen) + " rejected ops");
  }

  const double secs = seconds_since(t0);
  c.add("suite runs in <= 120 s", secs <= 120.0, fmt(secs, 1) + " s");
  r.details = {{"checks", c.items}};
  r.passed = c.failed == 0;
  r.summary = std::to_string(c.items.size() - c.failed) + "/" + std::to_string(c.items.size()) + " checks passed";
}

void criterion_live(Context&, CriterionResult& r) {
  // Throughput: 256x256 frames through hands, the default 128-input segmenter and the live point.
  SynthOptions opt;
  opt.size = 256;
  const std::vector<SynthScene> scenes = generate_scenes(24, 99, opt);
  Session session;
  for (int i = 0; i < 2; ++i) session.add_category({i, "c" + std::to_string(i), {0, 0, 0}});
  for (int i = 0; i < 4; ++i) {
    session.capture(std::make_shared<const Frame>(scenes[i].image), i % 2, Condition::naive);
  }
  DiversityEngine engine([&] { return session.snapshot(); }, /*async=*/false);
  engine.notify_change();
  LivePipeline pipeline(std::make_shared<HeuristicHandSegmenter>(), default_object_segmenter());
  for (int i = 0; i < 2; ++i) pipeline.process(scenes[i].image, 0, &engine);  // warm-up
  const auto t0 = Clock::now();
  int with_point = 0;
  const int frames = 20;
  for (int i = 0; i < frames; ++i) {
    const LiveResult lr = pipeline.process(scenes[4 + i].image, i % 2, &engine);
    if (lr.point) ++with_point;
  }
  const double hz = frames / seconds_since(t0);

  // Freshest-wins: fast publisher, consumer that sleeps between reads.
  EventHub hub(256);
  auto sub = hub.subscribe();
  const int n_points = 300;
  std::thread producer([&] {
    for (int i = 0; i < n_points; ++i) {
      hub.publish("live_point", {{"i", i}});
      if (i % 50 == 25) hub.publish("sample_added", {{"i", i}});
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
  });
  std::vector<Event> got;
  const auto deadline = Clock::now() + std::chrono::seconds(30);
  while (Clock::now() < deadline) {
    auto e = sub->next(std::chrono::milliseconds(200));
    if (!e) {
      if (producer.joinable() && hub.last_seq() >= static_cast<std::uint64_t>(n_points + n_points / 50)) break;
      continue;
    }
    got.push_back(*e);
    if (e->type == "live_point" && e->payload["i"] == n_points - 1) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(15));
  }
  producer.join();
  for (const Event& e : sub->drain()) got.push_back(e);
  bool seq_increasing = true, point_increasing = true;
  int last_point = -1, samples = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (i > 0 && got[i].seq <= got[i - 1].seq) seq_increasing = false;
    if (got[i].type == "live_point") {
      const int v = got[i].payload["i"].get<int>();
      if (v <= last_point) point_increasing = false;
      last_point = v;
    } else {
      ++samples;
    }
  }
  const bool coalescing = seq_increasing && point_increasing && last_point == n_points - 1 &&
                          samples == n_points / 50 && sub->coalesced() > 0;

  r.details = {{"frames", frames},
               {"hz", hz},
               {"frames_with_point", with_point},
               {"events_delivered", got.size()},
               {"coalesced", sub->coalesced()},
               {"freshest_last", last_point},
               {"non_coalescing_delivered", samples}};
  r.passed = hz >= 5.0 && with_point == frames && coalescing;
  r.summary = "live loop " + fmt(hz, 1) + " Hz at 256x256 (>= 5); coalescing delivered " + std::to_string(got.size()) +
              " of " + std::to_string(n_points + n_points / 50) + " events, newest last: " + (coalescing ? "yes" : "no");
}

struct CriterionDef {
  int id;
  const char* name;
  void (*run)(Context&, CriterionResult&);
};

const std::vector<CriterionDef>& primary_criteria() {
  static const std::vector<CriterionDef> defs{
      {1, "gesture-conditioning direction", criterion_seg_direction},
      {2, "conditioning sensitivity", criterion_sensitivity},
      {3, "spurious-cue failure case", criterion_spurious},
      {4, "condition harness orderings", criterion_conditions},
      {5, "diversity benefit", criterion_diversity},
      {6, "dataset arithmetic", criterion_dataset},
      {7, "oracle and property suites", criterion_properties},
      {8, "live-loop throughput and coalescing", criterion_live},
  };
  return defs;
}

struct ScratchDir {
  fs::path path;
  bool owned = false;
  explicit ScratchDir(fs::path p) {
    if (p.empty()) {
      std::random_device rd;
      p = fs::temp_directory_path() / ("imt-accept-" + std::to_string(rd()));
      owned = true;
    }
    fs::create_directories(p);
    path = p;
  }
  ~ScratchDir() {
    if (owned) {
      std::error_code ec;
      fs::remove_all(path, ec);
    }
  }
};

}  // namespace

std::vector<std::string> acceptance_suites() { return {"primary"}; }

AcceptanceReport run_acceptance(const std::string& suite, const AcceptanceOptions& options) {
  if (suite != "primary") fail(ErrorKind::invalid_argument, "unknown suite '" + suite + "' (available: primary)");
  const auto t0 = Clock::now();
  ScratchDir scratch(options.work_dir);
  Context ctx;
  ctx.work_dir = scratch.path;

  AcceptanceReport report;
  report.suite = suite;
  for (const CriterionDef& def : primary_criteria()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), def.id) == options.only.end()) {
      continue;
    }
    CriterionResult r;
    r.id = def.id;
    r.name = def.name;
    const auto c0 = Clock::now();
    try {
      def.run(ctx, r);
    } catch (const std::exception& e) {
      r.passed = false;
      r.summary = std::string("error: ") + e.what();
    }
    r.seconds = seconds_since(c0);
    if (options.on_result) options.on_result(r);
    report.criteria.push_back(std::move(r));
  }
  report.passed = !report.criteria.empty() &&
                  std::all_of(report.criteria.begin(), report.criteria.end(), [](const auto& c) { return c.passed; });
  report.seconds = seconds_since(t0);
  return report;
}

std::string format_line(const CriterionResult& r) {
  return std::string(r.passed ? "[PASS] " : "[FAIL] ") + std::to_string(r.id) + " " + r.name + " (" +
         fmt(r.seconds, 1) + " s): " + r.summary;
}

json to_json(const CriterionResult& r) {
  return {{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"seconds", r.seconds}, {"summary", r.summary},
          {"details", r.details}};
}

json to_json(const AcceptanceReport& r) {
  json cs = json::array();
  for (const auto& c : r.criteria) cs.push_back(to_json(c));
  return {{"suite", r.suite}, {"passed", r.passed}, {"seconds", r.seconds}, {"criteria", cs}};
}

}  // namespace imt
