#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace gali::selftest {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  bool quick = false;                      // reduced instance counts
  std::filesystem::path artifacts_dir;     // CSV/JSON artifacts; temp dir when empty
};

CriterionResult window_consistency(const Options& opt);
CriterionResult hand_trace_fidelity(const Options& opt);
CriterionResult interpolation_bound_linearity(const Options& opt);
CriterionResult noise_law(const Options& opt);
CriterionResult cache_equivalence(const Options& opt);
CriterionResult decay_reproduction(const Options& opt);
CriterionResult distribution_ordering(const Options& opt);
CriterionResult structural_invariants(const Options& opt);
CriterionResult reproducibility(const Options& opt);

/// Runs every criterion in order, printing one PASS/FAIL line each to `out`.
std::vector<CriterionResult> run_all(const Options& opt, std::ostream& out);

std::string format_line(const CriterionResult& r);

}  // namespace gali::selftest
