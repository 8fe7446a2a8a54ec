#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmpc/dataset.hpp"
#include "npmpc/solver.hpp"
#include "npmpc/systems.hpp"

namespace npmpc {

enum class CellStatus { Pending, Feasible, BetaOk, Split };
std::string to_string(CellStatus s);

struct CellTransition {
  Control u;
  double j = 0.0;
  std::size_t ds_index = 0;
};

/// l-infinity ball B(center, radius) with radius h0 3^-depth.
struct Cell {
  State center;
  double radius = 0.0;
  int depth = 0;
  CellStatus status = CellStatus::Pending;
  std::optional<CellTransition> transition;  // empty when the center solve was infeasible
  bool solved = false;
  std::vector<std::size_t> children;
  std::optional<std::size_t> parent;
  std::vector<std::int64_t> ipos;  // integer position on the depth-k lattice, for exact tiling checks

  bool leaf() const { return children.empty(); }
  Box box() const;
};

struct CellTree {
  std::vector<Cell> cells;
  std::vector<std::size_t> roots;
  Box X;
  std::int64_t per_axis = 0;  // depth-0 cells along each axis
  double h0 = 0.0;
  int k_max = 0;
  long long N = 0, K = 0;
  std::vector<long long> layer_counts;  // cells created per depth

  std::vector<std::size_t> leaves() const;
  int branching() const;  // 3^n
};

/// Initial grid of radius-h0 cells over X. Throws "precondition" unless X
/// is a hypercube and 2 h0 divides its side.
CellTree make_tree(const Box& X, double h0, double eps, double L_f);

/// Replaces leaf `idx` by 3^n children at offsets {-2h/3, 0, 2h/3}^n with
/// radius h/3; the middle child inherits the parent's transition. Returns
/// the new indices in lexicographic offset order (first axis slowest).
/// Throws "depth_cap" when the children would be deeper than max_depth.
std::vector<std::size_t> split(CellTree& tree, std::size_t idx, int max_depth = 40);

/// radius <= feas_radius_eq6(center, u) and the center pair is one-step feasible.
bool cell_feasibility_test(const Cell& cell, const System& sys, double eps);
/// radius <= beta (j + eta) / ((2 + beta) lambda).
bool cell_beta_test(const Cell& cell, double beta, double eta, double lambda);

/// Leaves are pairwise disjoint and their volumes sum to vol(X), decided in
/// integer lattice coordinates.
bool check_tiling(const CellTree& tree);

struct VerifyOptions {
  double h0 = 1.0;
  double beta = 5.0;
  double eta = 0.01;
  double lambda = 1.0;
  long long budget = 1'000'000;
  int jobs = 1;
  SolverOptions solver;
  std::string dump_pattern;  // "{t}" replaced by the iteration number
  /// Relative tolerance for the radius comparisons. Corner cells can meet
  /// the feasibility radius with equality.
  double rtol = 1e-9;
  bool check_tiling = false;  // assert the tiling invariant after every iteration
};

struct VerifyReport {
  bool fully_certified = false;
  bool budget_exhausted = false;
  int iterations_feasibility = 0;
  int iterations_beta = 0;
  long long center_solves = 0;
  long long infeasible_centers = 0;
  std::size_t leaves = 0;
  std::vector<std::size_t> uncertified;  // leaf indices not beta_ok
  double certified_volume_fraction = 0.0;
  double seconds = 0.0;
  nlohmann::json to_json(const CellTree& tree) const;
};

struct VerifyResult {
  CellTree tree;
  Dataset ds;
  VerifyReport report;
};

VerifyResult verify(const System& sys, double eps, const VerifyOptions& opts);

nlohmann::json dump_cells(const CellTree& tree, int iteration, const std::string& stage);

}  // namespace npmpc
