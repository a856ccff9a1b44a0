#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace imt {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  double seconds = 0.0;
  std::string summary;   // one line, human readable
  nlohmann::json details;
};

struct AcceptanceOptions {
  /// Scratch space for generated scenes and models. A temporary directory when empty.
  std::filesystem::path work_dir;
  /// Criterion ids to run; empty runs all of them.
  std::vector<int> only;
  /// Called as soon as each criterion finishes.
  std::function<void(const CriterionResult&)> on_result;
};

struct AcceptanceReport {
  std::string suite;
  std::vector<CriterionResult> criteria;
  bool passed = false;
  double seconds = 0.0;
};

std::vector<std::string> acceptance_suites();

/// Runs the named suite. Unknown suite names throw invalid_argument.
AcceptanceReport run_acceptance(const std::string& suite, const AcceptanceOptions& options = {});

/// "[PASS] 3 spurious-cue failure case (12.1 s): ..."
std::string format_line(const CriterionResult& r);

nlohmann::json to_json(const CriterionResult& r);
nlohmann::json to_json(const AcceptanceReport& r);

}  // namespace imt
