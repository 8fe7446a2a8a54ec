#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "npmpc/geometry.hpp"
#include "npmpc/solver.hpp"
#include "npmpc/systems.hpp"

namespace npmpc {

/// One stored triplet (x, u, j) with its place in the generating trajectory.
struct Transition {
  State x;
  Control u;
  double j = 0.0;                    // realized tail cost from x
  std::optional<std::size_t> succ;   // index of the entry holding f(x, u)
  int traj_id = 0;
  int step = 0;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(double eps, Norm norm, std::string system_hash, int horizon);

  const std::vector<Transition>& transitions() const { return items_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  double eps() const { return eps_; }
  const Norm& norm() const { return norm_; }
  const std::string& system_hash() const { return system_hash_; }
  int horizon() const { return horizon_; }
  int trajectories() const { return next_traj_; }

  /// Every non-terminal entry (step < T-1) links to a successor.
  bool closed() const;

  /// Appends and returns the new index; no deduplication.
  std::size_t append(Transition t);
  int new_trajectory_id() { return next_traj_++; }
  /// Removes entry i; links into it are cleared and later indices shift.
  void erase(std::size_t i);
  void set_norm(Norm n) { norm_ = n; }

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  double eps_ = 0.0;
  Norm norm_ = Norm::inf();
  std::string system_hash_;
  int horizon_ = 0;
  int next_traj_ = 0;
  std::vector<Transition> items_;
};

/// Appends the T transitions of a feasible solve with tail costs
/// j_t = c(x_t,u_t) + gamma j_{t+1}, j_T = F(x_T), linked by succ. Returns
/// the index of the step-0 entry. Throws "infeasible_result" for an
/// infeasible solve and "constraint_violation" if re-checking the stored
/// trajectory against X_{-eps} fails.
std::size_t ingest_trajectory(Dataset& ds, const System& sys, const SolveResult& result);

/// Link-based closure (same as ds.closed()).
bool check_closure(const Dataset& ds);
/// Recomputes f(x_i,u_i) for every non-terminal entry and looks for a stored
/// state within `tol` (l-infinity).
bool check_closure(const Dataset& ds, const System& sys, double tol = 1e-9);

/// Merges entries whose states agree within `tol` (l-infinity), keeping the
/// smaller j (ties: lower index). Links are redirected to the survivor.
Dataset deduplicate(const Dataset& ds, double tol = 1e-12);

/// Only the step-0 entries (their j is J(x, eps) over the full horizon).
Dataset heads_only(const Dataset& ds);

/// JSON-lines persistence. `warnings` receives non-fatal issues such as a
/// system digest that differs from `expected_hash`.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, const std::string& expected_hash = "",
                     std::vector<std::string>* warnings = nullptr);

}  // namespace npmpc
