#include "imt/segmentation.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/script.h>

#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "nn/torch_util.hpp"
#include "nn/unet.hpp"

namespace imt {

using nlohmann::json;

double evaluate_iou(const Mask& pred, const Mask& truth) {
  require_same_shape(pred, truth, "evaluate_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool a = pred.values[i] >= pred.threshold;
    const bool b = truth.values[i] >= truth.threshold;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------

Mask HeuristicHandSegmenter::segment(const Frame& frame) const {
  cv::Mat rgb(frame.height, frame.width, CV_8UC3, const_cast<std::uint8_t*>(frame.pixels.data()));
  cv::Mat hsv;
  cv::cvtColor(rgb, hsv, cv::COLOR_RGB2HSV);
  cv::Mat low, wrap;
  cv::inRange(hsv, cv::Scalar(0, opt_.sat_min, opt_.val_min), cv::Scalar(opt_.hue_max, opt_.sat_max, 255), low);
  cv::inRange(hsv, cv::Scalar(opt_.hue_wrap_min, opt_.sat_min, opt_.val_min), cv::Scalar(180, opt_.sat_max, 255),
              wrap);
  cv::Mat skin = low | wrap;
  if (opt_.close_kernel > 1) {
    const cv::Mat k = cv::getStructuringElement(cv::MORPH_ELLIPSE, {opt_.close_kernel, opt_.close_kernel});
    cv::morphologyEx(skin, skin, cv::MORPH_CLOSE, k);
  }

  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(skin, labels, stats, centroids, 8, CV_32S);
  std::vector<int> order;
  for (int l = 1; l < n; ++l) {
    if (stats.at<int>(l, cv::CC_STAT_AREA) >= opt_.min_component_area) order.push_back(l);
  }
  // Largest first; ties broken by label for determinism.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats.at<int>(a, cv::CC_STAT_AREA) > stats.at<int>(b, cv::CC_STAT_AREA);
  });
  if (static_cast<int>(order.size()) > opt_.keep_largest) order.resize(static_cast<std::size_t>(opt_.keep_largest));

  Mask out(frame.width, frame.height);
  std::vector<bool> keep(static_cast<std::size_t>(n), false);
  for (int l : order) keep[static_cast<std::size_t>(l)] = true;
  for (int y = 0; y < frame.height; ++y) {
    const int* row = labels.ptr<int>(y);
    for (int x = 0; x < frame.width; ++x) {
      if (row[x] > 0 && keep[static_cast<std::size_t>(row[x])]) out.at(x, y) = 255;
    }
  }
  return out;
}

struct LearnedHandSegmenter::Impl {
  torch::jit::script::Module module;
};

LearnedHandSegmenter::LearnedHandSegmenter(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
LearnedHandSegmenter::~LearnedHandSegmenter() = default;

std::unique_ptr<LearnedHandSegmenter> LearnedHandSegmenter::load(const std::filesystem::path& weights) {
  if (!std::filesystem::exists(weights)) fail(ErrorKind::io, "hand model weights missing: " + weights.string());
  auto impl = std::make_unique<Impl>();
  try {
    impl->module = torch::jit::load(weights.string());
  } catch (const c10::Error& e) {
    fail(ErrorKind::io, "hand model weights corrupt: " + weights.string());
  }
  impl->module.eval();
  return std::unique_ptr<LearnedHandSegmenter>(new LearnedHandSegmenter(std::move(impl)));
}

Mask LearnedHandSegmenter::segment(const Frame& frame) const {
  torch::NoGradGuard no_grad;
  auto x = torch::from_blob(const_cast<std::uint8_t*>(frame.pixels.data()), {frame.height, frame.width, 3},
                            torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32)
               .div(255.0f)
               .unsqueeze(0);
  torch::Tensor logits = impl_->module.forward({x}).toTensor();
  if (logits.size(-1) != frame.width || logits.size(-2) != frame.height) {
    logits = torch::upsample_bilinear2d(logits, {frame.height, frame.width}, false);
  }
  const FloatMap prob = nn::to_float_map(torch::sigmoid(logits).squeeze());
  return prob.threshold(0.5f);
}

// ---------------------------------------------------------------------------

ObjectSegmenter::ObjectSegmenter() = default;
ObjectSegmenter::~ObjectSegmenter() = default;
ObjectSegmenter::ObjectSegmenter(const ObjectSegmenter&) = default;
ObjectSegmenter& ObjectSegmenter::operator=(const ObjectSegmenter&) = default;
ObjectSegmenter::ObjectSegmenter(ObjectSegmenter&&) noexcept = default;
ObjectSegmenter& ObjectSegmenter::operator=(ObjectSegmenter&&) noexcept = default;

namespace {

void check_config(const SegModelConfig& cfg) {
  if (cfg.in_channels != 3 && cfg.in_channels != 4) {
    fail(ErrorKind::invalid_argument, "segmenter input channels must be 3 or 4");
  }
  if (cfg.depth < 1 || cfg.base_width < 1) fail(ErrorKind::invalid_argument, "segmenter depth/width must be >= 1");
  if (cfg.resolution < 16 || cfg.resolution % (1 << cfg.depth) != 0) {
    fail(ErrorKind::invalid_argument, "segmenter resolution must be >= 16 and divisible by 2^depth");
  }
}

std::shared_ptr<UNet> make_unet(const SegModelConfig& cfg) {
  return std::make_shared<UNet>(cfg.in_channels, cfg.depth, cfg.base_width);
}

torch::Tensor segmenter_input(const SegModelConfig& cfg, const Frame& frame, const Mask& hand) {
  torch::Tensor x = nn::frame_tensor(frame, cfg.resolution);
  if (cfg.in_channels == 4) x = torch::cat({x, nn::mask_tensor(hand, cfg.resolution)}, 0);
  return x;
}

}  // namespace

ObjectSegmenter ObjectSegmenter::create(const SegModelConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  ObjectSegmenter s;
  s.cfg_ = cfg;
  s.seed = seed;
  {
    std::lock_guard lock(nn::global_rng_mutex());
    torch::manual_seed(seed);
    s.net_ = make_unet(cfg);
  }
  s.net_->eval();
  return s;
}

std::size_t ObjectSegmenter::parameter_count() const {
  if (!net_) return 0;
  std::size_t n = 0;
  for (const auto& p : net_->parameters()) n += static_cast<std::size_t>(p.numel());
  return n;
}

SegmentationResult ObjectSegmenter::segment(const Frame& frame, const Mask& hand_mask) const {
  if (!net_) fail(ErrorKind::conflict, "object segmenter not loaded");
  frame.validate();
  require_same_shape(frame, hand_mask, "segment_object");
  torch::NoGradGuard no_grad;
  const torch::Tensor x = segmenter_input(cfg_, frame, hand_mask).unsqueeze(0);
  torch::Tensor prob = torch::sigmoid(net_->forward(x));
  prob = torch::upsample_bilinear2d(prob, {frame.height, frame.width}, false).clamp(0.0, 1.0);
  SegmentationResult r;
  r.probability = nn::to_float_map(prob[0][0]);
  r.mask = r.probability.threshold(0.5f);
  return r;
}

void ObjectSegmenter::save(const std::filesystem::path& dir) const {
  if (!net_) fail(ErrorKind::conflict, "object segmenter not loaded");
  std::filesystem::create_directories(dir);
  torch::save(net_, (dir / "weights.pt").string());
  json meta{{"architecture", "unet"},
            {"in_channels", cfg_.in_channels},
            {"depth", cfg_.depth},
            {"base_width", cfg_.base_width},
            {"resolution", cfg_.resolution},
            {"seed", seed},
            {"training_fingerprint", training_fingerprint},
            {"parameters", parameter_count()}};
  std::ofstream out(dir / "model.json");
  out << meta.dump(2) << '\n';
}

ObjectSegmenter ObjectSegmenter::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) fail(ErrorKind::io, "missing segmenter sidecar " + (dir / "model.json").string());
  ObjectSegmenter s;
  try {
    const json meta = json::parse(in);
    s.cfg_.in_channels = meta.at("in_channels").get<int>();
    s.cfg_.depth = meta.at("depth").get<int>();
    s.cfg_.base_width = meta.at("base_width").get<int>();
    s.cfg_.resolution = meta.at("resolution").get<int>();
    s.seed = meta.value("seed", std::uint64_t{0});
    s.training_fingerprint = meta.value("training_fingerprint", std::string{});
  } catch (const json::exception& e) {
    fail(ErrorKind::io, std::string("segmenter sidecar: ") + e.what());
  }
  check_config(s.cfg_);
  s.net_ = make_unet(s.cfg_);
  const auto weights = dir / "weights.pt";
  if (!std::filesystem::exists(weights)) fail(ErrorKind::io, "missing segmenter weights " + weights.string());
  try {
    torch::load(s.net_, weights.string());
  } catch (const c10::Error&) {
    fail(ErrorKind::io, "corrupt segmenter weights " + weights.string());
  }
  s.net_->eval();
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Mask record_hand_mask(const DatasetManifest& m, const ManifestRecord& r, const Frame& frame,
                      const HandSegmenter& fallback) {
  if (r.hand_mask) return read_mask_png(m.root / *r.hand_mask);
  return fallback.segment(frame);
}

}  // namespace

SegEvalReport evaluate_segmenter(const ObjectSegmenter& model, const DatasetManifest& manifest,
                                 const std::vector<ManifestRecord>& records, const HandSegmenter& fallback_hands) {
  SegEvalReport rep;
  for (const ManifestRecord& r : records) {
    const Frame frame = read_frame_png(manifest.root / r.image);
    const Mask hand = record_hand_mask(manifest, r, frame, fallback_hands);
    const Mask truth = read_mask_png(manifest.root / r.object_mask);
    rep.iou.push_back(evaluate_iou(model.segment(frame, hand).mask, truth));
  }
  if (!rep.iou.empty()) {
    rep.mean_iou = std::accumulate(rep.iou.begin(), rep.iou.end(), 0.0) / static_cast<double>(rep.iou.size());
  }
  return rep;
}

SegTrainResult train_object_segmenter(const DatasetManifest& manifest, const SegTrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  check_config(config.model);
  if (config.epochs < 0 || config.batch_size < 1) fail(ErrorKind::invalid_argument, "bad epochs/batch size");

  SegTrainResult result;
  SegTrainReport& rep = result.report;
  rep.split = split_by_participant(manifest, config.split_ratio, config.seed);
  const auto train_records = select_records(manifest, rep.split.train);
  const auto test_records = select_records(manifest, rep.split.test);
  if (train_records.empty() || test_records.empty()) fail(ErrorKind::invalid_argument, "empty train or test split");
  rep.train_images = train_records.size();
  rep.test_images = test_records.size();

  const SegModelConfig& cfg = config.model;
  const HeuristicHandSegmenter fallback;
  std::vector<torch::Tensor> xs, ys;
  for (const ManifestRecord& r : train_records) {
    const Frame frame = read_frame_png(manifest.root / r.image);
    const Mask hand = record_hand_mask(manifest, r, frame, fallback);
    xs.push_back(segmenter_input(cfg, frame, hand));
    ys.push_back(nn::mask_tensor(read_mask_png(manifest.root / r.object_mask), cfg.resolution));
  }
  const torch::Tensor X = torch::stack(xs);
  const torch::Tensor Y = torch::stack(ys);
  const double positive = Y.sum().item<double>();
  if (positive == 0.0 || positive == static_cast<double>(Y.numel())) {
    fail(ErrorKind::invalid_argument, "degenerate labels: every training mask pixel has the same class");
  }

  std::lock_guard lock(nn::global_rng_mutex());
  torch::manual_seed(config.seed);
  auto net = make_unet(cfg);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(config.seed);

  const auto n = static_cast<std::int64_t>(train_records.size());
  const std::int64_t batches_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::int64_t total_batches = std::max<std::int64_t>(1, batches_per_epoch * config.epochs);
  std::int64_t done = 0;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    net->train();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < n; b += config.batch_size) {
      const std::int64_t e = std::min(n, b + config.batch_size);
      const torch::Tensor idx =
          torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + e), torch::kInt64);
      torch::Tensor xb = X.index_select(0, idx);
      torch::Tensor yb = Y.index_select(0, idx);
      // Seeded flips keep the run reproducible.
      std::uniform_int_distribution<int> flip(0, 3);
      const int f = flip(rng);
      if (f & 1) xb = xb.flip({3}), yb = yb.flip({3});
      if (f & 2) xb = xb.flip({2}), yb = yb.flip({2});
      opt.zero_grad();
      const torch::Tensor loss = torch::binary_cross_entropy_with_logits(net->forward(xb), yb);
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(e - b);
      ++done;
      if (config.progress) config.progress(static_cast<double>(done) / static_cast<double>(total_batches));
    }
    rep.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  net->eval();

  ObjectSegmenter& model = result.model;
  model.cfg_ = cfg;
  model.net_ = net;
  model.seed = config.seed;
  model.training_fingerprint = manifest.fingerprint;

  const SegEvalReport eval = evaluate_segmenter(model, manifest, test_records, fallback);
  rep.heldout_iou = eval.iou;
  rep.heldout_mean_iou = eval.mean_iou;
  if (config.progress) config.progress(1.0);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace imt
