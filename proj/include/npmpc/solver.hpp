#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npmpc/systems.hpp"

namespace npmpc {

enum class SolveStatus { Optimal, MaxIter, Infeasible };

std::string to_string(SolveStatus s);

/// Solution of the eroded-constraint finite-horizon problem. `states` is
/// always the re-simulation of `controls` and `cost` is recomputed from it.
struct SolveResult {
  std::vector<Control> controls;
  std::vector<State> states;
  Cost cost = Cost::infeasible();
  SolveStatus status = SolveStatus::Infeasible;
  int iterations = 0;
};

struct SolverOptions {
  double tol = 1e-8;        // residual tolerance
  int max_iter = 10000;     // per inner solve
  int restarts = 4;         // random restarts on the nonlinear path (besides zero)
  std::uint64_t seed = 0;   // mixed with x0 to seed the restarts
  bool polish = true;       // active-set refinement on the quadratic LTI path
};

/// Solves the eroded problem from x0 over the system horizon T: x0 may sit in
/// X \ X_{-eps}; x_1..x_T must lie in X_{-eps}. Throws "precondition" if x0
/// is outside X or the eroded box is empty; infeasibility is a status.
SolveResult solve_conservative(const System& sys, const State& x0, double eps,
                               const SolverOptions& opts = {});

/// Same problem over an arbitrary horizon H (terminal cost applied at x_H).
SolveResult solve_horizon(const System& sys, const State& x0, double eps, int H,
                          const SolverOptions& opts = {});

/// First control of the H-step problem (receding-horizon MPC); nullopt when
/// the H-step problem is infeasible.
std::optional<Control> solve_conservative_mpc(const System& sys, const State& x0, double eps, int H,
                                              const SolverOptions& opts = {});

struct Assumption3Audit {
  double eps = 0.0;
  int samples = 0;
  std::vector<State> violations;
  bool holds() const { return violations.empty(); }
};

/// Solves from `samples` uniform draws of X and records every infeasible x0.
Assumption3Audit audit_assumption3(const System& sys, double eps, int samples, std::uint64_t seed,
                                   int jobs = 1, const SolverOptions& opts = {});

/// Throws "assumption3_violated" when the audit finds a violation.
void require_assumption3(const Assumption3Audit& audit);

}  // namespace npmpc
