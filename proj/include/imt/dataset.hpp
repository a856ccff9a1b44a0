#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "imt/session.hpp"

namespace imt {

inline constexpr int kManifestSchemaVersion = 1;

/// One (participant, gesture, image, mask) entry. Paths are relative to the manifest root.
struct ManifestRecord {
  std::string participant_id;
  GestureType gesture = GestureType::exhibiting;
  std::string image;
  std::string object_mask;
  std::optional<std::string> hand_mask;
  std::optional<std::string> distractor_mask;  // synthetic scenes only
  std::optional<int> label;                    // synthetic scenes only

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::string fingerprint;

  /// Sorted, unique participant ids.
  std::vector<std::string> participants() const;
};

/// Hash of the canonicalized (sorted) record list; independent of record order.
std::string manifest_fingerprint(const std::vector<ManifestRecord>& records);

/// Checks invariants eagerly: files exist, gestures valid, no duplicate records.
DatasetManifest load_manifest(const std::filesystem::path& manifest_json);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& manifest_json);

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  double ratio = 0.8;

  bool is_train(const std::string& participant) const;
};

/// floor(ratio * P) participants go to train after a seeded shuffle of the sorted id list.
SplitSpec split_by_participant(const DatasetManifest& m, double ratio, std::uint64_t seed);

/// Records whose participant is in the given list, in manifest order.
std::vector<ManifestRecord> select_records(const DatasetManifest& m, const std::vector<std::string>& participants);

}  // namespace imt
