#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace npmpc {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  int jobs = 1;
  int rollouts = 100;     // M for the rollout-based criteria
  int oracle_grid = 101;  // DP points per axis
  std::string oracle_cache_dir;  // empty: no caching
  std::uint64_t seed = 7;
  bool verbose = false;   // progress on stderr
};

/// Runs the eight acceptance criteria in order; `on_result` sees each one as
/// it finishes.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts,
                                            const std::function<void(const CriterionResult&)>& on_result = {});

/// "[PASS] 3 name: detail (1.2s)"
std::string format_result(const CriterionResult& r);

}  // namespace npmpc
