#include "imt/classifier.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "imt/codec.hpp"
#include "imt/error.hpp"
#include "nn/classifier_net.hpp"
#include "nn/torch_util.hpp"

namespace imt {

using nlohmann::json;

namespace {

std::string weights_fingerprint(ClassifierNet& net) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : net.parameters()) {
    const auto t = p.detach().contiguous();
    const auto* data = static_cast<const std::uint8_t*>(t.data_ptr());
    bytes.insert(bytes.end(), data, data + t.numel() * t.element_size());
  }
  return sha256_hex(bytes).substr(0, 16);
}

void check_categories(const std::vector<Category>& cats) {
  if (cats.size() < 2) fail(ErrorKind::invalid_argument, "need >= 2 categories");
}

json config_json(const ClsTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"use_masks", c.use_masks},
          {"background_suppression_prob", c.effective_suppression()},
          {"input_resolution", c.input_resolution},
          {"embedding_dim", c.embedding_dim}};
}

torch::Tensor batch_input(const ClassifierSnapshot& model, const std::vector<const Frame*>& frames) {
  std::vector<torch::Tensor> xs;
  xs.reserve(frames.size());
  for (const Frame* f : frames) {
    f->validate();
    xs.push_back(nn::classifier_input(*f, model.input_resolution));
  }
  return torch::stack(xs);
}

}  // namespace

std::string ClsTrainConfig::fingerprint() const { return sha256_hex(config_json(*this).dump()).substr(0, 16); }

std::size_t ClassifierSnapshot::index_of(CategoryId id) const {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    if (categories[i].id == id) return i;
  }
  fail(ErrorKind::not_found, "unknown category id " + std::to_string(id));
}

std::shared_ptr<ClassifierSnapshot> make_untrained_classifier(std::vector<Category> categories,
                                                              const ClsTrainConfig& config) {
  check_categories(categories);
  auto snap = std::make_shared<ClassifierSnapshot>();
  snap->categories = std::move(categories);
  snap->embedding_dim = config.embedding_dim;
  snap->input_resolution = config.input_resolution;
  snap->config = config;
  snap->config.progress = nullptr;
  snap->config_fingerprint = config.fingerprint();
  snap->created_at = now_ms();
  {
    std::lock_guard lock(nn::global_rng_mutex());
    torch::manual_seed(config.seed);
    snap->net = std::make_shared<ClassifierNet>(static_cast<int>(snap->categories.size()), config.embedding_dim);
  }
  snap->net->eval();
  snap->fingerprint = weights_fingerprint(*snap->net);
  return snap;
}

void check_trainable(const TeachingSet& set, const ClsTrainConfig& config) {
  if (set.categories.size() < 2) fail(ErrorKind::invalid_argument, "need >= 2 categories");
  const auto counts = counts_per_category(set);
  for (const Category& c : set.categories) {
    if (counts.at(c.id) == 0) fail(ErrorKind::invalid_argument, "empty category: " + c.name);
  }
  if (config.epochs < 0 || config.batch_size < 1) fail(ErrorKind::invalid_argument, "bad epochs/batch size");
  const double p = config.background_suppression_prob;
  if (p < 0.0 || p > 1.0) fail(ErrorKind::invalid_argument, "background suppression probability outside [0,1]");
  if (config.input_resolution % 8 != 0 || config.input_resolution < 16) {
    fail(ErrorKind::invalid_argument, "classifier input resolution must be a multiple of 8, >= 16");
  }
}

ClsTrainResult train_classifier(const TeachingSet& set, const ClsTrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  check_trainable(set, config);
  const auto counts = counts_per_category(set);
  const double p = config.effective_suppression();

  auto snap = std::make_shared<ClassifierSnapshot>();
  snap->categories = set.categories;
  snap->embedding_dim = config.embedding_dim;
  snap->input_resolution = config.input_resolution;
  snap->config = config;
  snap->config.progress = nullptr;
  snap->config_fingerprint = config.fingerprint();

  const int side = config.input_resolution;
  const auto n = static_cast<std::int64_t>(set.samples.size());
  std::vector<torch::Tensor> xs, ms;
  std::vector<std::int64_t> labels;
  std::vector<bool> has_mask;
  for (const TeachingSample& s : set.samples) {
    xs.push_back(nn::classifier_input(*s.frame, side));
    const bool masked = config.use_masks && s.object_mask != nullptr;
    has_mask.push_back(masked);
    ms.push_back(masked ? nn::mask_tensor(*s.object_mask, side) : torch::ones({1, side, side}));
    labels.push_back(static_cast<std::int64_t>(snap->index_of(s.category_id)));
  }
  const torch::Tensor X = torch::stack(xs);
  const torch::Tensor M = torch::stack(ms);
  const torch::Tensor Y = torch::tensor(labels, torch::kInt64);

  // Inverse-frequency class weights.
  const auto k = static_cast<double>(set.categories.size());
  std::vector<float> w;
  for (const Category& c : set.categories) {
    w.push_back(static_cast<float>(static_cast<double>(n) / (k * static_cast<double>(counts.at(c.id)))));
  }
  const torch::Tensor class_weights = torch::tensor(w);

  std::lock_guard lock(nn::global_rng_mutex());
  torch::manual_seed(config.seed);
  auto net = std::make_shared<ClassifierNet>(static_cast<int>(set.categories.size()), config.embedding_dim);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution suppress(p);

  ClsTrainResult result;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  const std::int64_t batches = std::max<std::int64_t>(1, ((n + config.batch_size - 1) / config.batch_size) * config.epochs);
  std::int64_t done = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    net->train();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    // Coin flips are drawn for every sample so the stream does not depend on mask availability.
    std::vector<float> gate(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const bool flip = suppress(rng);
      gate[static_cast<std::size_t>(i)] = (flip && has_mask[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
    }
    const torch::Tensor G = torch::tensor(gate).view({n, 1, 1, 1});
    double loss_sum = 0.0;
    for (std::int64_t b = 0; b < n; b += config.batch_size) {
      const std::int64_t e = std::min(n, b + config.batch_size);
      const torch::Tensor idx =
          torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + e), torch::kInt64);
      torch::Tensor xb = X.index_select(0, idx);
      const torch::Tensor mb = M.index_select(0, idx);
      const torch::Tensor gb = G.index_select(0, idx);
      // Background -> 0 (mid-gray in the [-1,1] input space) where the gate is on.
      xb = xb * (1.0f - gb * (1.0f - mb));
      const torch::Tensor yb = Y.index_select(0, idx);
      opt.zero_grad();
      const torch::Tensor loss =
          torch::nn::functional::cross_entropy(net->forward(xb), yb,
                                               torch::nn::functional::CrossEntropyFuncOptions().weight(class_weights));
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>() * static_cast<double>(e - b);
      ++done;
      if (config.progress) config.progress(static_cast<double>(done) / static_cast<double>(batches));
    }
    result.report.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    net->eval();
    torch::NoGradGuard no_grad;
    const torch::Tensor pred = net->forward(X).argmax(1);
    result.report.epoch_accuracy.push_back(pred.eq(Y).to(torch::kFloat64).mean().item<double>());
  }
  net->eval();
  snap->net = net;
  snap->fingerprint = weights_fingerprint(*net);
  snap->created_at = now_ms();
  result.model = snap;
  if (config.progress) config.progress(1.0);
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::vector<Prediction> predict_batch(const ClassifierSnapshot& model, const std::vector<const Frame*>& frames) {
  if (!model.net) fail(ErrorKind::conflict, "classifier not loaded");
  if (model.categories.empty()) fail(ErrorKind::invalid_argument, "classifier has no categories");
  std::vector<Prediction> out;
  if (frames.empty()) return out;
  torch::NoGradGuard no_grad;
  const torch::Tensor probs = torch::softmax(model.net->forward(batch_input(model, frames)).to(torch::kFloat64), 1);
  for (std::int64_t i = 0; i < probs.size(0); ++i) {
    Prediction p;
    const torch::Tensor row = probs[i].contiguous();
    p.probabilities.assign(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
    p.top_index = static_cast<std::size_t>(
        std::max_element(p.probabilities.begin(), p.probabilities.end()) - p.probabilities.begin());
    p.top = model.categories[p.top_index].id;
    out.push_back(std::move(p));
  }
  return out;
}

Prediction predict(const ClassifierSnapshot& model, const Frame& frame) { return predict_batch(model, {&frame}).front(); }

std::vector<float> embed(const ClassifierSnapshot& model, const Frame& frame) {
  if (!model.net) fail(ErrorKind::conflict, "classifier not loaded");
  torch::NoGradGuard no_grad;
  const torch::Tensor e = ClassifierNet::pool(model.net->features(batch_input(model, {&frame}))).contiguous();
  return {e.data_ptr<float>(), e.data_ptr<float>() + e.numel()};
}

void save_classifier(const ClassifierSnapshot& model, const std::filesystem::path& dir, const ClsTrainReport* report) {
  if (!model.net) fail(ErrorKind::conflict, "classifier not loaded");
  std::filesystem::create_directories(dir);
  torch::save(model.net, (dir / "weights.pt").string());
  json meta{{"architecture", "conv4-gap"},
            {"embedding_dim", model.embedding_dim},
            {"input_resolution", model.input_resolution},
            {"config", config_json(model.config)},
            {"config_fingerprint", model.config_fingerprint},
            {"fingerprint", model.fingerprint},
            {"created_at", model.created_at},
            {"categories", json::array()}};
  for (const Category& c : model.categories) {
    meta["categories"].push_back({{"id", c.id}, {"name", c.name}, {"color", {c.color[0], c.color[1], c.color[2]}}});
  }
  if (report) {
    meta["metrics"] = {{"epoch_loss", report->epoch_loss},
                       {"epoch_accuracy", report->epoch_accuracy},
                       {"seconds", report->seconds}};
  }
  std::ofstream out(dir / "model.json");
  out << meta.dump(2) << '\n';
}

std::shared_ptr<ClassifierSnapshot> load_classifier(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) fail(ErrorKind::io, "missing classifier sidecar " + (dir / "model.json").string());
  auto snap = std::make_shared<ClassifierSnapshot>();
  try {
    const json meta = json::parse(in);
    snap->embedding_dim = meta.at("embedding_dim").get<int>();
    snap->input_resolution = meta.at("input_resolution").get<int>();
    const json& c = meta.at("config");
    snap->config.epochs = c.at("epochs").get<int>();
    snap->config.batch_size = c.at("batch_size").get<int>();
    snap->config.learning_rate = c.at("learning_rate").get<double>();
    snap->config.seed = c.at("seed").get<std::uint64_t>();
    snap->config.use_masks = c.at("use_masks").get<bool>();
    snap->config.background_suppression_prob = c.at("background_suppression_prob").get<double>();
    snap->config.input_resolution = snap->input_resolution;
    snap->config.embedding_dim = snap->embedding_dim;
    snap->config_fingerprint = meta.value("config_fingerprint", std::string{});
    snap->fingerprint = meta.value("fingerprint", std::string{});
    snap->created_at = meta.value("created_at", std::int64_t{0});
    for (const json& j : meta.at("categories")) {
      Category cat;
      cat.id = j.at("id").get<int>();
      cat.name = j.at("name").get<std::string>();
      const auto rgb = j.at("color").get<std::vector<int>>();
      for (std::size_t i = 0; i < 3 && i < rgb.size(); ++i) cat.color[i] = static_cast<std::uint8_t>(rgb[i]);
      snap->categories.push_back(std::move(cat));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::io, std::string("classifier sidecar: ") + e.what());
  }
  check_categories(snap->categories);
  snap->net = std::make_shared<ClassifierNet>(static_cast<int>(snap->categories.size()), snap->embedding_dim);
  const auto weights = dir / "weights.pt";
  if (!std::filesystem::exists(weights)) fail(ErrorKind::io, "missing classifier weights " + weights.string());
  try {
    torch::load(snap->net, weights.string());
  } catch (const c10::Error&) {
    fail(ErrorKind::io, "corrupt classifier weights " + weights.string());
  }
  snap->net->eval();
  return snap;
}

std::shared_ptr<ClassifierSnapshot> with_random_head(const ClassifierSnapshot& model, std::uint64_t seed) {
  auto copy = std::make_shared<ClassifierSnapshot>(model);
  auto net = std::make_shared<ClassifierNet>(static_cast<int>(model.categories.size()), model.embedding_dim);
  {
    torch::NoGradGuard no_grad;
    const auto src = model.net->named_parameters();
    for (auto& p : net->named_parameters()) p.value().copy_(src[p.key()]);
    std::lock_guard lock(nn::global_rng_mutex());
    torch::manual_seed(seed);
    net->head->reset_parameters();
  }
  net->eval();
  copy->net = net;
  copy->fingerprint = weights_fingerprint(*net);
  return copy;
}

}  // namespace imt
