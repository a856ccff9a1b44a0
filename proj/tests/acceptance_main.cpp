// Runs every primary acceptance criterion and prints one line per criterion.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "imt/acceptance.hpp"

int main(int argc, char** argv) {
  imt::AcceptanceOptions opt;
  opt.on_result = [](const imt::CriterionResult& r) { std::cout << imt::format_line(r) << std::endl; };
  for (int i = 1; i < argc; ++i) opt.only.push_back(std::atoi(argv[i]));
  const auto report = imt::run_acceptance("primary", opt);
  if (const char* out = std::getenv("IMT_ACCEPTANCE_REPORT")) std::ofstream(out) << imt::to_json(report).dump(2) << "\n";
  std::cout << (report.passed ? "PASS" : "FAIL") << ": " << report.criteria.size() << " criteria in " << report.seconds
            << " s" << std::endl;
  return report.passed ? 0 : 1;
}
