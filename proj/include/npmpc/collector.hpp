#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>

#include "npmpc/certify.hpp"
#include "npmpc/dataset.hpp"
#include "npmpc/solver.hpp"

namespace npmpc {

struct CollectOptions {
  int jobs = 1;
  SolverOptions solver;
  bool dedup = true;
  int probes = 4096;  // uncovered-ball probes
  // When all three are set the report carries the sample-complexity numbers.
  std::optional<double> beta, eta, delta, lambda;
};

struct CollectReport {
  int budget = 0;
  int feasible = 0;
  std::vector<State> infeasible_x0;
  bool assumption3_violated = false;
  std::size_t transitions = 0;
  double largest_gap = 0.0;        // max over probes of the distance to the nearest stored state
  std::optional<State> largest_gap_at;
  std::optional<SampleComplexity> pac;
  std::optional<CertificateReport> recursive_feasibility;
  nlohmann::json to_json() const;
};

struct CollectResult {
  Dataset ds;
  CollectReport report;
};

/// N uniform initial states from a counter-based stream keyed by (seed, i);
/// each is solved and its trajectory ingested in draw order. Infeasible
/// draws use up budget and are recorded.
CollectResult collect(const System& sys, double eps, int N, std::uint64_t seed, const CollectOptions& opts = {});

/// One trajectory per node of a g^n endpoint grid over X.
CollectResult collect_grid(const System& sys, double eps, int g, const CollectOptions& opts = {});

}  // namespace npmpc
