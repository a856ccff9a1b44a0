// imt: headless workflows (synthetic data, training, benches, service, acceptance).
#include <cmath>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "imt/acceptance.hpp"
#include "imt/bench.hpp"
#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "imt/saliency.hpp"
#include "imt/service.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void emit(const json& report, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << report.dump(2) << "\n";
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  if (!f) imt::fail(imt::ErrorKind::io, "cannot write " + out);
  f << report.dump(2) << "\n";
}

imt::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive machine teaching toolkit"};
  app.require_subcommand(1);
  std::string out;

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "Generate synthetic scenes and a manifest");
  int n_scenes = 400;
  std::uint64_t synth_seed = 7;
  bool spurious = false;
  int size = 128, num_classes = 4;
  double decoy = 0.0;
  std::string dir;
  synth->add_option("--n", n_scenes, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);
  synth->add_flag("--spurious-cue", spurious, "Add a class-coloured corner patch");
  synth->add_option("--size", size)->check(CLI::Range(imt::kMinFrameSide, 1080));
  synth->add_option("--classes", num_classes)->check(CLI::PositiveNumber);
  synth->add_option("--decoy-prob", decoy, "Chance of an unmarked skin region near a distractor")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--dir", dir, "Output directory")->required();
  synth->add_option("--out", out, "JSON report path");
  synth->callback([&] {
    imt::SynthOptions o;
    o.size = size;
    o.num_classes = num_classes;
    o.decoy_hand_prob = decoy;
    const auto m = imt::generate_synthetic(n_scenes, synth_seed, spurious, dir, o);
    emit({{"manifest", (fs::path(dir) / "manifest.json").string()},
          {"records", m.records.size()},
          {"participants", m.participants().size()},
          {"fingerprint", m.fingerprint}},
         out);
  });

  // train-seg
  auto* train_seg = app.add_subcommand("train-seg", "Train the gesture-conditioned object segmenter");
  std::string manifest, model_dir;
  imt::SegTrainConfig seg_cfg;
  seg_cfg.model.resolution = 64;
  train_seg->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  train_seg->add_option("--channels", seg_cfg.model.in_channels, "4 = RGB + hand, 3 = RGB only")
      ->check(CLI::IsMember({3, 4}));
  train_seg->add_option("--epochs", seg_cfg.epochs)->check(CLI::PositiveNumber);
  train_seg->add_option("--resolution", seg_cfg.model.resolution)->check(CLI::Range(16, 512));
  train_seg->add_option("--seed", seg_cfg.seed);
  train_seg->add_option("--ratio", seg_cfg.split_ratio)->check(CLI::Range(0.0, 1.0));
  train_seg->add_option("--model-dir", model_dir, "Where to save the model");
  train_seg->add_option("--out", out);
  train_seg->callback([&] {
    seg_cfg.progress = [](double p) { std::cerr << "\rtraining " << static_cast<int>(p * 100) << "%" << std::flush; };
    const auto r = imt::train_object_segmenter(imt::load_manifest(manifest), seg_cfg);
    std::cerr << "\n";
    json j = imt::to_json(r.report);
    if (!model_dir.empty()) {
      r.model.save(model_dir);
      j["model_dir"] = model_dir;
    }
    emit(j, out);
  });

  // eval-seg
  auto* eval_seg = app.add_subcommand("eval-seg", "Score a segmenter on the held-out participants");
  std::string seg_model;
  std::uint64_t split_seed = 7;
  double ratio = 0.8;
  bool all_records = false;
  eval_seg->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval_seg->add_option("--model", seg_model)->required()->check(CLI::ExistingDirectory);
  eval_seg->add_option("--seed", split_seed, "Split seed");
  eval_seg->add_option("--ratio", ratio)->check(CLI::Range(0.0, 1.0));
  eval_seg->add_flag("--all", all_records, "Score every record, not just the test split");
  eval_seg->add_option("--out", out);
  eval_seg->callback([&] {
    const auto m = imt::load_manifest(manifest);
    const auto model = imt::ObjectSegmenter::load(seg_model);
    std::vector<imt::ManifestRecord> records = m.records;
    if (!all_records) records = imt::select_records(m, imt::split_by_participant(m, ratio, split_seed).test);
    const auto r = imt::evaluate_segmenter(model, m, records, imt::HeuristicHandSegmenter{});
    emit({{"mean_iou", r.mean_iou}, {"iou", r.iou}, {"records", records.size()}}, out);
  });

  // train-cls
  auto* train_cls = app.add_subcommand("train-cls", "Train a classifier on an exported session");
  std::string session_dir;
  imt::ClsTrainConfig cls_cfg;
  train_cls->add_option("--session", session_dir, "Exported session directory")->required()->check(CLI::ExistingDirectory);
  train_cls->add_option("--epochs", cls_cfg.epochs)->check(CLI::PositiveNumber);
  train_cls->add_option("--seed", cls_cfg.seed);
  train_cls->add_flag("--use-masks", cls_cfg.use_masks, "Suppress background using the object masks");
  train_cls->add_option("--suppression", cls_cfg.background_suppression_prob)->check(CLI::Range(0.0, 1.0));
  train_cls->add_option("--model-dir", model_dir)->required();
  train_cls->add_option("--out", out);
  train_cls->callback([&] {
    const auto r = imt::train_classifier(imt::import_session(session_dir), cls_cfg);
    imt::save_classifier(*r.model, model_dir, &r.report);
    json j = imt::to_json(r.report);
    j["model_dir"] = model_dir;
    j["fingerprint"] = r.model->fingerprint;
    emit(j, out);
  });

  // assess
  auto* assess_cmd = app.add_subcommand("assess", "Predict and explain one image");
  std::string cls_model, image, saliency_png, overlay_png;
  std::optional<int> target;
  assess_cmd->add_option("--model", cls_model)->required()->check(CLI::ExistingDirectory);
  assess_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
  assess_cmd->add_option("--target", target, "Category id to explain (default: top prediction)");
  assess_cmd->add_option("--saliency-png", saliency_png);
  assess_cmd->add_option("--overlay-png", overlay_png);
  assess_cmd->add_option("--out", out);
  assess_cmd->callback([&] {
    const auto model = imt::load_classifier(cls_model);
    const imt::Frame frame = imt::read_frame_png(image);
    const auto a = imt::assess(*model, frame, target);
    json probs = json::array();
    for (std::size_t i = 0; i < model->categories.size(); ++i) {
      probs.push_back({{"category_id", model->categories[i].id},
                       {"name", model->categories[i].name},
                       {"p", a.prediction.probabilities[i]}});
    }
    if (!saliency_png.empty()) {
      imt::Mask gray(frame.width, frame.height);
      for (std::size_t i = 0; i < gray.values.size(); ++i) {
        gray.values[i] = static_cast<std::uint8_t>(std::lround(255.0f * a.saliency.values.values[i]));
      }
      imt::write_png(saliency_png, gray);
    }
    if (!overlay_png.empty()) imt::write_png(overlay_png, imt::overlay(frame, a.saliency));
    emit({{"probabilities", probs}, {"top", a.prediction.top}, {"target", a.target}, {"latency_ms", a.latency_ms}}, out);
  });

  // bench-conditions
  auto* bench_cond = app.add_subcommand("bench-conditions", "Compare the four annotation conditions");
  imt::ConditionsBenchConfig cond_cfg;
  std::string work_dir;
  bench_cond->add_option("--seed", cond_cfg.seed);
  bench_cond->add_option("--n-per-class", cond_cfg.n_per_class)->check(CLI::PositiveNumber);
  bench_cond->add_option("--heldout", cond_cfg.heldout)->check(CLI::PositiveNumber);
  bench_cond->add_option("--segmenter", seg_model, "In-situ segmenter (trained on the fly when omitted)");
  bench_cond->add_option("--work-dir", work_dir);
  bench_cond->add_option("--out", out);
  bench_cond->callback([&] {
    if (!seg_model.empty()) cond_cfg.segmenter = std::make_shared<const imt::ObjectSegmenter>(imt::ObjectSegmenter::load(seg_model));
    cond_cfg.work_dir = work_dir.empty() ? fs::temp_directory_path() / "imt-bench-conditions" : fs::path(work_dir);
    json rows = json::array();
    for (const auto& r : imt::bench_conditions(cond_cfg)) rows.push_back(imt::to_json(r));
    emit({{"seed", cond_cfg.seed}, {"runs", rows}}, out);
  });

  // bench-diversity
  auto* bench_div = app.add_subcommand("bench-diversity", "Diverse vs redundant teacher policies");
  std::vector<std::uint64_t> div_seeds{1};
  imt::DiversityBenchConfig div_cfg;
  bench_div->add_option("--seed", div_seeds, "One or more seeds")->expected(1, -1);
  bench_div->add_option("--n-per-class", div_cfg.n_per_class)->check(CLI::PositiveNumber);
  bench_div->add_option("--heldout", div_cfg.heldout)->check(CLI::PositiveNumber);
  bench_div->add_option("--out", out);
  bench_div->callback([&] {
    json results = json::array();
    for (auto s : div_seeds) {
      div_cfg.seed = s;
      json j = imt::to_json(imt::bench_diversity(div_cfg));
      j["seed"] = s;
      results.push_back(j);
    }
    emit({{"results", results}}, out);
  });

  // bench-seg
  auto* bench_seg = app.add_subcommand("bench-seg", "4-channel vs 3-channel segmenter plus conditioning sensitivity");
  imt::SegBenchConfig segb_cfg;
  bench_seg->add_option("--seed", segb_cfg.seed);
  bench_seg->add_option("--n", segb_cfg.n_scenes)->check(CLI::PositiveNumber);
  bench_seg->add_option("--epochs", segb_cfg.epochs)->check(CLI::PositiveNumber);
  bench_seg->add_option("--work-dir", work_dir);
  bench_seg->add_option("--model-dir", model_dir, "Save the 4-channel model here");
  bench_seg->add_option("--out", out);
  bench_seg->callback([&] {
    segb_cfg.work_dir = work_dir.empty() ? fs::temp_directory_path() / "imt-bench-seg" : fs::path(work_dir);
    const auto r = imt::bench_segmentation(segb_cfg);
    json j = imt::to_json(r);
    j["sensitivity"] = imt::to_json(imt::conditioning_sensitivity(r.full_model, r.heldout, 50));
    if (!model_dir.empty()) r.full_model.save(model_dir);
    emit(j, out);
  });

  // bench-spurious
  auto* bench_sp = app.add_subcommand("bench-spurious", "Spurious-cue benchmark: unmasked vs mask-trained classifier");
  imt::SpuriousBenchConfig sp_cfg;
  bench_sp->add_option("--seed", sp_cfg.seed);
  bench_sp->add_option("--n-per-class", sp_cfg.n_per_class)->check(CLI::PositiveNumber);
  bench_sp->add_option("--heldout", sp_cfg.heldout)->check(CLI::PositiveNumber);
  bench_sp->add_option("--out", out);
  bench_sp->callback([&] { emit(imt::to_json(imt::bench_spurious(sp_cfg)), out); });

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service (PORT, MODEL_DIR, MAX_FRAME_BYTES honoured)");
  imt::ServiceConfig svc_cfg = imt::config_from_env();
  std::string svc_model_dir = svc_cfg.model_dir.string();
  serve->add_option("--host", svc_cfg.host);
  serve->add_option("--port", svc_cfg.port)->check(CLI::Range(0, 65535));
  serve->add_option("--model-dir", svc_model_dir);
  serve->callback([&] {
    svc_cfg.model_dir = svc_model_dir;
    imt::Service service(svc_cfg);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << svc_cfg.host << ":" << svc_cfg.port << "\n";
    service.run();
    g_service = nullptr;
  });

  // acceptance
  auto* accept = app.add_subcommand("acceptance", "Run an acceptance suite");
  std::string suite;
  std::vector<int> only;
  accept->add_option("--suite", suite)->required();
  accept->add_option("--only", only, "Criterion ids to run");
  accept->add_option("--work-dir", work_dir);
  accept->add_option("--out", out);
  int exit_code = 0;
  accept->callback([&] {
    const auto names = imt::acceptance_suites();
    if (std::find(names.begin(), names.end(), suite) == names.end()) {
      throw CLI::ValidationError("--suite", "unknown suite '" + suite + "' (available: primary)");
    }
    imt::AcceptanceOptions opt;
    opt.work_dir = work_dir;
    opt.only = only;
    opt.on_result = [](const imt::CriterionResult& r) { std::cout << imt::format_line(r) << std::endl; };
    const auto report = imt::run_acceptance(suite, opt);
    std::cout << (report.passed ? "PASS" : "FAIL") << " suite " << suite << " in " << report.seconds << " s\n";
    if (!out.empty()) emit(imt::to_json(report), out);
    if (!report.passed) exit_code = 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const imt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == imt::ErrorKind::invalid_argument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
