#include "imt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "imt/codec.hpp"
#include "imt/error.hpp"

namespace imt {

using nlohmann::json;

namespace {

json to_json(const ManifestRecord& r) {
  json j{{"participant_id", r.participant_id},
         {"gesture_type", to_string(r.gesture)},
         {"image", r.image},
         {"object_mask", r.object_mask},
         {"hand_mask", r.hand_mask ? json(*r.hand_mask) : json(nullptr)}};
  if (r.distractor_mask) j["distractor_mask"] = *r.distractor_mask;
  if (r.label) j["label"] = *r.label;
  return j;
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.participant_id = j.at("participant_id").get<std::string>();
  r.gesture = parse_gesture(j.at("gesture_type").get<std::string>());
  r.image = j.at("image").get<std::string>();
  r.object_mask = j.at("object_mask").get<std::string>();
  if (j.contains("hand_mask") && !j["hand_mask"].is_null()) r.hand_mask = j["hand_mask"].get<std::string>();
  if (j.contains("distractor_mask") && !j["distractor_mask"].is_null()) {
    r.distractor_mask = j["distractor_mask"].get<std::string>();
  }
  if (j.contains("label") && !j["label"].is_null()) r.label = j["label"].get<int>();
  if (r.participant_id.empty()) fail(ErrorKind::invalid_argument, "record with empty participant_id");
  return r;
}

}  // namespace

std::vector<std::string> DatasetManifest::participants() const {
  std::set<std::string> ids;
  for (const ManifestRecord& r : records) ids.insert(r.participant_id);
  return {ids.begin(), ids.end()};
}

std::string manifest_fingerprint(const std::vector<ManifestRecord>& records) {
  std::vector<std::string> lines;
  lines.reserve(records.size());
  for (const ManifestRecord& r : records) lines.push_back(to_json(r).dump());
  std::sort(lines.begin(), lines.end());
  std::string canon;
  for (const std::string& l : lines) {
    canon += l;
    canon += '\n';
  }
  return sha256_hex(canon);
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_json) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_json);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + manifest_json.string());
  DatasetManifest m;
  m.root = manifest_json.parent_path();
  try {
    const json doc = json::parse(in);
    const int version = doc.at("schema_version").get<int>();
    if (version != kManifestSchemaVersion) {
      fail(ErrorKind::invalid_argument, "unsupported manifest schema_version " + std::to_string(version));
    }
    for (const json& j : doc.at("records")) m.records.push_back(record_from_json(j));
  } catch (const json::exception& e) {
    fail(ErrorKind::invalid_argument, std::string("manifest schema: ") + e.what());
  }

  std::set<std::string> seen;
  for (const ManifestRecord& r : m.records) {
    if (!seen.insert(r.image).second) fail(ErrorKind::invalid_argument, "duplicate record for image " + r.image);
    for (const std::string* p : {&r.image, &r.object_mask}) {
      if (!fs::exists(m.root / *p)) fail(ErrorKind::io, "missing file " + (m.root / *p).string());
    }
    for (const auto* p : {&r.hand_mask, &r.distractor_mask}) {
      if (*p && !fs::exists(m.root / **p)) fail(ErrorKind::io, "missing file " + (m.root / **p).string());
    }
  }
  m.fingerprint = manifest_fingerprint(m.records);
  return m;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& manifest_json) {
  json doc{{"schema_version", kManifestSchemaVersion}, {"records", json::array()}};
  for (const ManifestRecord& r : m.records) doc["records"].push_back(to_json(r));
  doc["fingerprint"] = manifest_fingerprint(m.records);
  if (manifest_json.has_parent_path()) std::filesystem::create_directories(manifest_json.parent_path());
  std::ofstream out(manifest_json);
  if (!out) fail(ErrorKind::io, "cannot write manifest " + manifest_json.string());
  out << doc.dump(1) << '\n';
}

bool SplitSpec::is_train(const std::string& participant) const {
  return std::find(train.begin(), train.end(), participant) != train.end();
}

SplitSpec split_by_participant(const DatasetManifest& m, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) fail(ErrorKind::invalid_argument, "split ratio must lie in (0,1)");
  std::vector<std::string> ids = m.participants();
  if (ids.size() < 2) fail(ErrorKind::invalid_argument, "split needs at least 2 participants");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ids.size())));
  // Both sides must be usable.
  n_train = std::clamp<std::size_t>(n_train, 1, ids.size() - 1);
  SplitSpec s;
  s.seed = seed;
  s.ratio = ratio;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<ManifestRecord> select_records(const DatasetManifest& m, const std::vector<std::string>& participants) {
  std::set<std::string> keep(participants.begin(), participants.end());
  std::vector<ManifestRecord> out;
  for (const ManifestRecord& r : m.records) {
    if (keep.count(r.participant_id)) out.push_back(r);
  }
  return out;
}

}  // namespace imt
