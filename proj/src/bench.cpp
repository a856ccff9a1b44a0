#include "imt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "imt/saliency.hpp"

namespace imt {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

const char* shape_name(int label) {
  static const char* names[] = {"square", "circle", "triangle", "diamond"};
  return names[label % kShapeKinds];
}

/// Scenes for the classifier benches: hue varies freely, distractors are gray, and
/// targets are drawn larger than in the segmentation scenes so that shape is
/// learnable from a few dozen samples at the classifier's input resolution.
SynthOptions classifier_scene_options(int num_classes, bool cue) {
  SynthOptions o;
  o.target_radius_min = 20.0f;
  o.target_radius_max = 30.0f;
  o.num_classes = num_classes;
  o.distractor_style = DistractorStyle::neutral;
  o.spurious_cue = cue;
  return o;
}

std::vector<int> grouped_labels(int num_classes, int n_per_class) {
  std::vector<int> labels;
  for (int c = 0; c < num_classes; ++c) labels.insert(labels.end(), static_cast<std::size_t>(n_per_class), c);
  return labels;
}

std::vector<SynthScene> random_scenes(int num_classes, int n, std::mt19937_64& rng, const SynthOptions& opt) {
  std::vector<int> labels;
  std::vector<ViewParams> views;
  for (int i = 0; i < n; ++i) {
    labels.push_back(i % num_classes);
    views.push_back(ViewParams::random(rng));
  }
  return scenes_for_views(labels, views, rng, opt);
}

}  // namespace

// ---------------------------------------------------------------------------

SegBenchResult bench_segmentation(const SegBenchConfig& cfg) {
  if (cfg.work_dir.empty()) fail(ErrorKind::invalid_argument, "segmentation bench needs a work directory");
  std::vector<SynthScene> scenes = generate_scenes(cfg.n_scenes, cfg.seed, cfg.scenes);
  const DatasetManifest manifest = write_scenes(scenes, cfg.work_dir);

  SegBenchResult out;
  for (int channels : {4, 3}) {
    SegTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.seed = cfg.seed;
    tc.model.in_channels = channels;
    tc.model.resolution = cfg.resolution;
    if (cfg.progress) {
      const std::string stage = channels == 4 ? "full" : "ablation";
      tc.progress = [&, stage](double f) { cfg.progress(stage, f); };
    }
    SegTrainResult r = train_object_segmenter(manifest, tc);
    if (channels == 4) {
      out.full = std::move(r.report);
      out.full_model = std::move(r.model);
    } else {
      out.ablation = std::move(r.report);
    }
  }
  out.gap = out.full.heldout_mean_iou - out.ablation.heldout_mean_iou;

  const std::set<std::string> test(out.full.split.test.begin(), out.full.split.test.end());
  for (SynthScene& s : scenes) {
    if (test.contains(s.participant_id)) out.heldout.push_back(std::move(s));
  }
  return out;
}

SensitivityResult conditioning_sensitivity(const ObjectSegmenter& model, const std::vector<SynthScene>& scenes, int n) {
  SensitivityResult out;
  for (const SynthScene& s : scenes) {
    if (static_cast<int>(out.cases.size()) >= n) break;
    if (s.spec.distractors.empty() || s.distractor_mask.empty()) continue;
    const ShapeSpec& d = s.spec.distractors.front();
    const int dx = static_cast<int>(std::lround(d.cx - s.spec.target.cx));
    const int dy = static_cast<int>(std::lround(d.cy - s.spec.target.cy));

    SensitivityCase c;
    const Mask before = model.segment(s.image, s.hand_mask).mask;
    c.target_iou_before = evaluate_iou(before, s.object_mask);
    c.distractor_iou_before = evaluate_iou(before, s.distractor_mask);
    const Mask after = model.segment(s.image, translate(s.hand_mask, dx, dy)).mask;
    c.target_iou_after = evaluate_iou(after, s.object_mask);
    c.distractor_iou_after = evaluate_iou(after, s.distractor_mask);
    c.flipped = c.target_iou_before > c.distractor_iou_before && c.distractor_iou_after > c.target_iou_after;
    out.flipped += c.flipped ? 1 : 0;
    out.cases.push_back(c);
  }
  if (!out.cases.empty()) out.flip_rate = static_cast<double>(out.flipped) / static_cast<double>(out.cases.size());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<SynthScene> scenes_for_views(const std::vector<int>& labels, const std::vector<ViewParams>& views,
                                         std::mt19937_64& rng, const SynthOptions& opt) {
  if (labels.size() != views.size()) fail(ErrorKind::invalid_argument, "labels and views differ in length");
  std::vector<SynthScene> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    SynthScene s = render_scene(make_scene_spec(labels[i], kAllGestures[i % 4], views[i], rng(), opt));
    s.participant_id = "teacher";
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Category> shape_categories(int num_classes) {
  std::vector<Category> cats;
  for (int c = 0; c < num_classes; ++c) {
    const Rgb color = cue_color_for_class(c);
    cats.push_back({c, shape_name(c), color});
  }
  return cats;
}

TeachingSet teaching_set_from_scenes(const std::vector<SynthScene>& scenes, int num_classes, Condition condition,
                                     const MaskSource& masks) {
  TeachingSet set;
  set.categories = shape_categories(num_classes);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SynthScene& s = scenes[i];
    TeachingSample t;
    char id[16];
    std::snprintf(id, sizeof id, "t%04zu", i + 1);
    t.sample_id = id;
    t.frame = std::make_shared<const Frame>(s.image);
    t.category_id = s.spec.label;
    t.condition = condition;
    t.captured_at = static_cast<std::int64_t>(i);
    if (masks) {
      t.object_mask = masks(s);
      t.hand_mask = std::make_shared<const Mask>(s.hand_mask);
    }
    validate_sample(t);
    set.samples.push_back(std::move(t));
  }
  return set;
}

std::string frames_fingerprint(const TeachingSet& set) {
  std::vector<std::uint8_t> bytes;
  for (const TeachingSample& s : set.samples) bytes.insert(bytes.end(), s.frame->pixels.begin(), s.frame->pixels.end());
  return sha256_hex(bytes);
}

HeldoutScore score_heldout(const ClassifierSnapshot& model, const std::vector<SynthScene>& scenes) {
  HeldoutScore out;
  int right = 0;
  for (const SynthScene& s : scenes) {
    const AssessmentResult a = assess(model, s.image);
    const bool ok = a.prediction.top == s.spec.label;
    right += ok ? 1 : 0;
    out.correct.push_back(ok);
    out.confidence.push_back(a.prediction.probabilities[a.prediction.top_index]);
    out.explanation_iou.push_back(explanation_iou(a.saliency, s.object_mask));
  }
  if (!scenes.empty()) out.accuracy = static_cast<double>(right) / static_cast<double>(scenes.size());
  out.mean_explanation_iou = mean(out.explanation_iou);
  return out;
}

// ---------------------------------------------------------------------------

SpuriousBenchResult bench_spurious(const SpuriousBenchConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  const SynthOptions opt = classifier_scene_options(cfg.num_classes, /*cue=*/true);
  const std::vector<SynthScene> train = random_scenes(cfg.num_classes, cfg.num_classes * cfg.n_per_class, rng, opt);
  const std::vector<SynthScene> test = random_scenes(cfg.num_classes, cfg.heldout, rng, opt);

  SpuriousBenchResult out;
  for (bool masked : {false, true}) {
    ClsTrainConfig cc = cfg.cls;
    cc.use_masks = masked;
    const TeachingSet set = masked ? teaching_set_from_scenes(train, cfg.num_classes, Condition::contour,
                                                              [](const SynthScene& s) {
                                                                return std::make_shared<const Mask>(s.object_mask);
                                                              })
                                   : teaching_set_from_scenes(train, cfg.num_classes, Condition::naive);
    const ClsTrainResult r = train_classifier(set, cc);
    (masked ? out.masked : out.unmasked) = score_heldout(*r.model, test);
  }
  int hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (out.unmasked.confidence[i] >= 0.7 && out.unmasked.explanation_iou[i] < 0.2) ++hits;
    if (out.masked.explanation_iou[i] > out.unmasked.explanation_iou[i]) ++out.masked_better_pairs;
  }
  if (!test.empty()) out.confident_off_object = static_cast<double>(hits) / static_cast<double>(test.size());
  out.seconds = seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const ObjectSegmenter> train_condition_segmenter(const ConditionsBenchConfig& cfg) {
  if (cfg.work_dir.empty()) fail(ErrorKind::invalid_argument, "condition bench needs a work directory to train a segmenter");
  SynthOptions opt = classifier_scene_options(cfg.num_classes, /*cue=*/true);
  opt.images_per_participant = 12;
  const DatasetManifest m = write_scenes(generate_scenes(cfg.segmenter_scenes, cfg.seed + 1, opt), cfg.work_dir);
  SegTrainConfig tc;
  tc.epochs = cfg.segmenter_epochs;
  tc.seed = cfg.seed;
  tc.model.resolution = 64;
  return std::make_shared<const ObjectSegmenter>(train_object_segmenter(m, tc).model);
}

std::vector<ConditionRun> bench_conditions(const ConditionsBenchConfig& cfg) {
  const auto segmenter = cfg.segmenter ? cfg.segmenter : train_condition_segmenter(cfg);
  if (!segmenter->loaded()) fail(ErrorKind::invalid_argument, "condition bench segmenter is not loaded");
  std::mt19937_64 rng(cfg.seed);
  const SynthOptions opt = classifier_scene_options(cfg.num_classes, /*cue=*/true);
  const std::vector<SynthScene> train = random_scenes(cfg.num_classes, cfg.num_classes * cfg.n_per_class, rng, opt);
  const std::vector<SynthScene> test = random_scenes(cfg.num_classes, cfg.heldout, rng, opt);
  const HeuristicHandSegmenter hands;

  std::vector<ConditionRun> runs;
  for (Condition c : kAllConditions) {
    const auto t0 = std::chrono::steady_clock::now();
    ConditionRun run;
    run.condition = c;
    std::vector<double> mask_ious;
    double inference_seconds = 0.0;
    MaskSource source;
    switch (c) {
      case Condition::naive: break;
      case Condition::click:
      case Condition::contour:
        source = [](const SynthScene& s) { return std::make_shared<const Mask>(s.object_mask); };
        break;
      case Condition::in_situ:
        source = [&](const SynthScene& s) {
          const auto ti = std::chrono::steady_clock::now();
          const Mask hand = segment_hands(hands, s.image);
          auto m = std::make_shared<const Mask>(segmenter->segment(s.image, hand).mask);
          inference_seconds += seconds_since(ti);
          return m;
        };
        break;
    }
    const TeachingSet set = teaching_set_from_scenes(train, cfg.num_classes, c, source);
    if (source) {
      for (std::size_t i = 0; i < train.size(); ++i) {
        mask_ious.push_back(evaluate_iou(*set.samples[i].object_mask, train[i].object_mask));
      }
    }
    switch (c) {
      case Condition::naive: run.annotation_seconds_per_sample = 0.0; break;
      case Condition::click: run.annotation_seconds_per_sample = cfg.click_seconds; break;
      case Condition::contour: run.annotation_seconds_per_sample = cfg.contour_seconds; break;
      case Condition::in_situ: run.annotation_seconds_per_sample = inference_seconds / static_cast<double>(train.size()); break;
    }
    run.total_seconds = run.annotation_seconds_per_sample * static_cast<double>(train.size());
    run.mask_iou = mean(mask_ious);
    run.frames_fingerprint = frames_fingerprint(set);

    ClsTrainConfig cc = cfg.cls;
    cc.use_masks = c != Condition::naive;
    const ClsTrainResult r = train_classifier(set, cc);
    const HeldoutScore score = score_heldout(*r.model, test);
    run.accuracy = score.accuracy;
    run.explanation_iou = score.mean_explanation_iou;
    run.wall_seconds = seconds_since(t0);
    runs.push_back(run);
  }
  return runs;
}

// ---------------------------------------------------------------------------

std::string_view to_string(TeacherPolicyKind k) { return k == TeacherPolicyKind::diverse ? "diverse" : "redundant"; }

std::vector<SynthScene> TeacherPolicy::teach(int num_classes, int n_per_class, std::uint64_t seed,
                                             const SynthOptions& opt) const {
  std::mt19937_64 rng(seed);
  const std::vector<int> labels = grouped_labels(num_classes, n_per_class);
  std::vector<ViewParams> views;
  views.reserve(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    const ViewParams anchor = ViewParams::random(rng);
    for (int i = 0; i < n_per_class; ++i) {
      views.push_back(kind == TeacherPolicyKind::diverse ? ViewParams::random(rng) : anchor.jittered(rng, jitter));
    }
  }
  return scenes_for_views(labels, views, rng, opt);
}

DiversityBenchResult bench_diversity(const DiversityBenchConfig& cfg) {
  const SynthOptions opt = classifier_scene_options(cfg.num_classes, /*cue=*/false);
  // Both policies see the same seed, so only the view distribution differs.
  const std::uint64_t teach_seed = cfg.seed * 1000003ULL + 17;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::vector<SynthScene> test = random_scenes(cfg.num_classes, cfg.heldout, rng, opt);

  TeachingSet sets[2];
  for (int k = 0; k < 2; ++k) {
    TeacherPolicy policy;
    policy.kind = k == 0 ? TeacherPolicyKind::diverse : TeacherPolicyKind::redundant;
    sets[k] = teaching_set_from_scenes(policy.teach(cfg.num_classes, cfg.n_per_class, teach_seed, opt),
                                       cfg.num_classes, Condition::naive);
  }

  const RandomProjectionEmbedder space;
  std::vector<std::vector<float>> all;
  for (const TeachingSet& s : sets) {
    for (const TeachingSample& t : s.samples) all.push_back(space.embed(*t.frame));
  }
  const Projection2D projection = fit_projection(all);

  DiversityBenchResult out;
  out.embedding_space = space.id();
  for (int k = 0; k < 2; ++k) {
    PolicyOutcome& o = k == 0 ? out.diverse : out.redundant;
    ClsTrainConfig cc = cfg.cls;
    cc.use_masks = false;
    const ClsTrainResult r = train_classifier(sets[k], cc);
    int right = 0;
    for (const SynthScene& s : test) right += predict(*r.model, s.image).top == s.spec.label ? 1 : 0;
    o.accuracy = test.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(test.size());
    o.diversity = diversity_report(sets[k], space, projection);
  }
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const SegTrainReport& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"heldout_mean_iou", r.heldout_mean_iou},
          {"train_images", r.train_images},
          {"test_images", r.test_images},
          {"train_participants", r.split.train.size()},
          {"test_participants", r.split.test.size()},
          {"seconds", r.seconds}};
}

json to_json(const SegBenchResult& r) {
  return {{"full", to_json(r.full)}, {"ablation", to_json(r.ablation)}, {"gap", r.gap}};
}

json to_json(const SensitivityResult& r) {
  json cases = json::array();
  for (const SensitivityCase& c : r.cases) {
    cases.push_back({{"target_iou_before", c.target_iou_before},
                     {"distractor_iou_before", c.distractor_iou_before},
                     {"target_iou_after", c.target_iou_after},
                     {"distractor_iou_after", c.distractor_iou_after},
                     {"flipped", c.flipped}});
  }
  return {{"scenes", r.cases.size()}, {"flipped", r.flipped}, {"flip_rate", r.flip_rate}, {"cases", cases}};
}

json to_json(const HeldoutScore& s) {
  return {{"accuracy", s.accuracy},
          {"mean_explanation_iou", s.mean_explanation_iou},
          {"confidence", s.confidence},
          {"explanation_iou", s.explanation_iou}};
}

json to_json(const SpuriousBenchResult& r) {
  return {{"unmasked", to_json(r.unmasked)},
          {"masked", to_json(r.masked)},
          {"confident_off_object", r.confident_off_object},
          {"masked_better_pairs", r.masked_better_pairs},
          {"seconds", r.seconds}};
}

json to_json(const ConditionRun& r) {
  return {{"condition", to_string(r.condition)},
          {"annotation_seconds_per_sample", r.annotation_seconds_per_sample},
          {"total_seconds", r.total_seconds},
          {"accuracy", r.accuracy},
          {"explanation_iou", r.explanation_iou},
          {"mask_iou", r.mask_iou},
          {"wall_seconds", r.wall_seconds},
          {"frames_fingerprint", r.frames_fingerprint}};
}

json to_json(const DiversityReport& r) {
  json per_class = json::array();
  for (const ClassDiversity& c : r.per_class) {
    json pts = json::array();
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      pts.push_back({{"x", c.points[i].x},
                     {"y", c.points[i].y},
                     {"sample_id", i < c.sample_ids.size() ? c.sample_ids[i] : std::string()}});
    }
    per_class.push_back({{"class", c.category}, {"dispersion", c.dispersion}, {"points", pts}});
  }
  return {{"per_class", per_class}, {"overall", r.overall}};
}

json to_json(const DiversityBenchResult& r) {
  return {{"embedding_space", r.embedding_space},
          {"diverse", {{"accuracy", r.diverse.accuracy}, {"diversity", to_json(r.diverse.diversity)}}},
          {"redundant", {{"accuracy", r.redundant.accuracy}, {"diversity", to_json(r.redundant.diversity)}}}};
}

json to_json(const ClsTrainReport& r) {
  return {{"epoch_loss", r.epoch_loss}, {"epoch_accuracy", r.epoch_accuracy}, {"seconds", r.seconds}};
}

}  // namespace imt
