#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npmpc/systems.hpp"

namespace npmpc {

/// Backward value iteration on a state grid, used as ground truth for small
/// systems. J_0 lives on a grid over X (initial states may sit outside the
/// eroded set); J_1..J_{T-1} on a grid over X_{-eps}; J_T = F is evaluated
/// directly. Values between nodes are multilinear interpolations, and a
/// query is infeasible when any interpolation corner is.
struct DPOracle {
  int n = 0, m = 0, T = 0;
  double gamma = 1.0, eps = 0.0;
  std::vector<int> state_counts;    // per axis
  std::vector<int> control_counts;  // per axis
  Box X0, Xe, U;                    // grid for k=0, grid for k>=1, control box
  std::string system_hash;
  std::vector<std::vector<double>> J;          // J[k], k = 0..T-1, +inf = infeasible
  std::vector<std::vector<std::int32_t>> greedy;  // argmin control index, -1 if infeasible

  std::size_t nodes() const;
  Eigen::VectorXd node(int k, std::size_t idx) const;
  Control control(std::size_t j) const;
  std::size_t controls() const;
  /// max_a pitch_a over the eroded grid (l-infinity node spacing).
  double pitch() const;
};

struct DPOptions {
  std::vector<int> state_grid;    // empty: 201 per axis
  std::vector<int> control_grid;  // empty: 101 per axis
  int jobs = 1;
  std::size_t max_entries = 600'000'000;  // table + precompute guard
};

/// Throws "oracle_unsupported" for n > 3 or a terminal-constraint system,
/// "memory_guard" when the tables would be too large.
DPOracle dp_build(const System& sys, double eps, const DPOptions& opts = {});

/// Interpolated J_k(x). For k = 0 x must lie in X; for k >= 1 points outside
/// X_{-eps} are infeasible. k = T returns F.
Cost dp_query_k(const DPOracle& o, const System& sys, int k, const State& x);
/// J(x, eps) = J_0(x).
Cost dp_query(const DPOracle& o, const State& x);

/// Greedy control at (k, x) by minimizing c(x,u) + gamma J_{k+1}(f(x,u)) over
/// the control grid; lowest index wins ties. nullopt if every control is
/// infeasible.
std::optional<Control> dp_greedy(const DPOracle& o, const System& sys, int k, const State& x);

/// Rolls the greedy policy for T steps from x0 and returns the realized cost.
Cost dp_greedy_rollout(const DPOracle& o, const System& sys, const State& x0);

/// Flat binary export: magic "NPDP1", header, row-major float64 payload.
void dp_save(const DPOracle& o, const std::string& path);
DPOracle dp_load(const std::string& path);

/// Loads `path` if it holds an oracle for the same system, eps and grids;
/// otherwise builds one and writes it there. Empty path: just build.
DPOracle dp_build_cached(const System& sys, double eps, const DPOptions& opts, const std::string& path);

}  // namespace npmpc
