#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace csr {

struct GradcheckOptions {
  int instances = 20;  // seeded random micro-instances per suite
  double step = 1e-5;  // central difference step
  double tolerance = 1e-4;
  std::uint64_t seed = 20240601;
  /// Test hook: negate the analytic gradient of the named suite ("all" for
  /// every suite) so the detector can be shown to fire.
  std::string inject_fault;
};

struct SuiteResult {
  std::string name;
  int instances = 0;
  long checks = 0;  // gradient coordinates compared
  double max_rel_error = 0.0;
  std::string worst;  // where max_rel_error occurred
  bool passed = false;
};

struct GradcheckReport {
  std::vector<SuiteResult> suites;

  bool passed() const;
  const SuiteResult& worst_suite() const;
  /// One line per suite: name, instances, checks, max relative error, verdict.
  std::string to_text() const;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is zero from dividing roundoff by roundoff.
double relative_error(double analytic, double numeric, double floor = 1e-4);

std::vector<std::string> gradcheck_suite_names();

/// Runs every suite: each layer kind, the whole micro-net, the three NLLs,
/// the optimal shift, both training objectives (ground-truth and predicted
/// residuals) and the L2 loss.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

}  // namespace csr
