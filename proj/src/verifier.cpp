#include "npmpc/verifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "npmpc/certify.hpp"
#include "npmpc/parallel.hpp"

namespace npmpc {

std::string to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Pending: return "pending";
    case CellStatus::Feasible: return "feasible";
    case CellStatus::BetaOk: return "beta_ok";
    case CellStatus::Split: return "split";
  }
  return "?";
}

Box Cell::box() const {
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(center.size(), radius);
  return Box(center - r, center + r);
}

std::vector<std::size_t> CellTree::leaves() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i].leaf()) out.push_back(i);
  return out;
}

int CellTree::branching() const {
  int b = 1;
  for (int i = 0; i < X.dim(); ++i) b *= 3;
  return b;
}

CellTree make_tree(const Box& X, double h0, double eps, double L_f) {
  if (X.empty()) throw NpmpcError("precondition", "empty state set");
  if (!(h0 > 0)) throw NpmpcError("precondition", "h0 must be positive");
  const int n = X.dim();
  const double side = X.hi()(0) - X.lo()(0);
  for (int i = 1; i < n; ++i)
    if (std::abs(X.hi()(i) - X.lo()(i) - side) > 1e-12 * side)
      throw NpmpcError("precondition", "verifier needs a hypercube state set");
  const double ratio = side / (2 * h0);
  const double m = std::round(ratio);
  if (m < 1 || std::abs(ratio - m) > 1e-9 * std::max(1.0, ratio))
    throw NpmpcError("precondition", fmt::format("2*h0 = {} does not divide the side {}", 2 * h0, side));

  CellTree tree;
  tree.X = X;
  tree.per_axis = static_cast<std::int64_t>(m);
  tree.h0 = h0;
  if (eps > 0) {
    const double v = std::log(h0 * L_f / eps) / std::log(3.0);
    tree.k_max = std::max(0, static_cast<int>(std::ceil(v - 1e-12)));
  } else {
    tree.k_max = 20;
  }
  std::uint64_t total = 1;
  for (int i = 0; i < n; ++i) {
    total *= static_cast<std::uint64_t>(m);
    if (total > 10'000'000) throw NpmpcError("memory_guard", "initial grid too large");
  }
  std::vector<std::int64_t> idx(n, 0);
  for (std::uint64_t c = 0; c < total; ++c) {
    Cell cell;
    cell.center.resize(n);
    for (int i = 0; i < n; ++i) cell.center(i) = X.lo()(i) + (2.0 * static_cast<double>(idx[i]) + 1.0) * h0;
    cell.radius = h0;
    cell.ipos = idx;
    tree.roots.push_back(tree.cells.size());
    tree.cells.push_back(std::move(cell));
    for (int i = n - 1; i >= 0; --i) {
      if (++idx[i] < tree.per_axis) break;
      idx[i] = 0;
    }
  }
  tree.layer_counts = {static_cast<long long>(total)};
  return tree;
}

std::vector<std::size_t> split(CellTree& tree, std::size_t idx, int max_depth) {
  if (!tree.cells.at(idx).leaf()) throw NpmpcError("precondition", "split needs a leaf");
  const Cell parent = tree.cells[idx];
  if (parent.depth + 1 > max_depth)
    throw NpmpcError("depth_cap", fmt::format("cell {} at depth {} cannot split past {}", idx, parent.depth, max_depth));
  const int n = static_cast<int>(parent.center.size());
  const int b = tree.branching();
  const double step = 2.0 * parent.radius / 3.0;
  std::vector<std::size_t> kids;
  std::vector<int> off(n, 0);
  for (int c = 0; c < b; ++c) {
    Cell child;
    child.center = parent.center;
    child.ipos.resize(n);
    bool middle = true;
    for (int i = 0; i < n; ++i) {
      if (off[i] != 1) {
        child.center(i) += (off[i] - 1) * step;
        middle = false;
      }
      child.ipos[i] = 3 * parent.ipos[i] + off[i];
    }
    child.radius = parent.radius / 3.0;
    child.depth = parent.depth + 1;
    child.parent = idx;
    if (middle) {
      child.transition = parent.transition;
      child.solved = parent.solved;
    }
    kids.push_back(tree.cells.size());
    tree.cells.push_back(std::move(child));
    for (int i = n - 1; i >= 0; --i) {
      if (++off[i] < 3) break;
      off[i] = 0;
    }
  }
  tree.cells[idx].children = kids;
  tree.cells[idx].status = CellStatus::Split;
  if (static_cast<int>(tree.layer_counts.size()) <= parent.depth + 1) tree.layer_counts.resize(parent.depth + 2, 0);
  tree.layer_counts[parent.depth + 1] += b;
  return kids;
}

bool cell_feasibility_test(const Cell& cell, const System& sys, double eps) {
  return cell.transition && one_step_feasible(sys, cell.center, cell.transition->u, eps) &&
         cell.radius <= feas_radius_eq6(sys, cell.center, cell.transition->u, eps);
}

bool cell_beta_test(const Cell& cell, double beta, double eta, double lambda) {
  return cell.transition && cell.radius <= coverage_radius(beta, eta, lambda, cell.transition->j);
}

bool check_tiling(const CellTree& tree) {
  const auto lv = tree.leaves();
  if (lv.empty()) return false;
  const int n = tree.X.dim();
  int D = 0;
  for (auto i : lv) D = std::max(D, tree.cells[i].depth);
  using I128 = __int128;
  I128 p3 = 1;
  for (int k = 0; k < D; ++k) p3 *= 3;
  I128 full = 1;
  for (int i = 0; i < n; ++i) {
    full *= p3 * tree.per_axis;
    if (full > (I128(1) << 100)) throw NpmpcError("precondition", "tree too deep for the exact tiling check");
  }
  struct IBox {
    std::vector<I128> lo, hi;
  };
  std::vector<IBox> boxes;
  boxes.reserve(lv.size());
  I128 vol = 0;
  for (auto i : lv) {
    const Cell& c = tree.cells[i];
    I128 s = 1;
    for (int k = c.depth; k < D; ++k) s *= 3;
    IBox b;
    I128 v = 1;
    for (int d = 0; d < n; ++d) {
      b.lo.push_back(c.ipos[d] * s);
      b.hi.push_back((c.ipos[d] + 1) * s);
      if (b.lo.back() < 0 || b.hi.back() > p3 * tree.per_axis) return false;
      v *= s;
    }
    vol += v;
    boxes.push_back(std::move(b));
  }
  if (vol != full) return false;
  // Sweep on axis 0 for pairwise overlap.
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return boxes[a].lo[0] < boxes[b].lo[0]; });
  for (std::size_t a = 0; a < order.size(); ++a) {
    const IBox& A = boxes[order[a]];
    for (std::size_t b = a + 1; b < order.size() && boxes[order[b]].lo[0] < A.hi[0]; ++b) {
      const IBox& B = boxes[order[b]];
      bool overlap = true;
      for (int d = 1; d < n && overlap; ++d) overlap = A.lo[d] < B.hi[d] && B.lo[d] < A.hi[d];
      if (overlap) return false;
    }
  }
  return true;
}

nlohmann::json dump_cells(const CellTree& tree, int iteration, const std::string& stage) {
  nlohmann::json cells = nlohmann::json::array();
  for (auto i : tree.leaves()) {
    const Cell& c = tree.cells[i];
    nlohmann::json e;
    e["index"] = i;
    e["center"] = std::vector<double>(c.center.data(), c.center.data() + c.center.size());
    e["radius"] = c.radius;
    e["depth"] = c.depth;
    e["status"] = to_string(c.status);
    if (c.transition) e["j"] = c.transition->j;
    else e["j"] = nullptr;
    cells.push_back(std::move(e));
  }
  return {{"iteration", iteration}, {"stage", stage}, {"K", tree.K}, {"N", tree.N}, {"cells", cells}};
}

nlohmann::json VerifyReport::to_json(const CellTree& tree) const {
  nlohmann::json un = nlohmann::json::array();
  for (auto i : uncertified) {
    const Cell& c = tree.cells[i];
    un.push_back({{"index", i},
                  {"center", std::vector<double>(c.center.data(), c.center.data() + c.center.size())},
                  {"radius", c.radius},
                  {"status", to_string(c.status)}});
  }
  return {{"fully_certified", fully_certified},
          {"budget_exhausted", budget_exhausted},
          {"iterations_feasibility", iterations_feasibility},
          {"iterations_beta", iterations_beta},
          {"center_solves", center_solves},
          {"infeasible_centers", infeasible_centers},
          {"leaves", leaves},
          {"cells", tree.cells.size()},
          {"k_max", tree.k_max},
          {"budget_N", tree.N},
          {"budget_K", tree.K},
          {"layer_counts", tree.layer_counts},
          {"certified_volume_fraction", certified_volume_fraction},
          {"uncertified", un},
          {"seconds", seconds}};
}

namespace {

struct Run {
  const System& sys;
  double eps;
  const VerifyOptions& opts;
  CellTree tree;
  Dataset ds;
  VerifyReport rep;
  int t = 0;

  // Solves every unsolved cell among `idx` in parallel, ingesting in index order.
  void solve(const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> todo;
    for (auto i : idx)
      if (!tree.cells[i].solved) todo.push_back(i);
    std::vector<SolveResult> res(todo.size());
    parallel_for(todo.size(), opts.jobs,
                 [&](std::size_t k) { res[k] = solve_conservative(sys, tree.cells[todo[k]].center, eps, opts.solver); });
    for (std::size_t k = 0; k < todo.size(); ++k) {
      Cell& c = tree.cells[todo[k]];
      c.solved = true;
      ++rep.center_solves;
      if (res[k].status == SolveStatus::Infeasible) {
        ++rep.infeasible_centers;
        continue;
      }
      const std::size_t at = ingest_trajectory(ds, sys, res[k]);
      c.transition = CellTransition{res[k].controls.front(), ds[at].j, at};
    }
  }

  double slack(double r) const { return r * (1 + opts.rtol) + opts.rtol * 1e-3; }

  bool feasible(const Cell& c) const {
    return c.transition && one_step_feasible(sys, c.center, c.transition->u, eps) &&
           c.radius <= slack(feas_radius_eq6(sys, c.center, c.transition->u, eps));
  }
  bool beta_ok(const Cell& c) const {
    return c.transition && c.radius <= slack(coverage_radius(opts.beta, opts.eta, opts.lambda, c.transition->j));
  }

  void dump(const std::string& stage) {
    if (opts.check_tiling && !check_tiling(tree))
      throw NpmpcError("internal", fmt::format("tiling invariant broken at iteration {}", t));
    if (opts.dump_pattern.empty()) return;
    std::string path = opts.dump_pattern;
    const auto pos = path.find("{t}");
    if (pos != std::string::npos) path.replace(pos, 3, std::to_string(t));
    else path += "." + std::to_string(t);
    std::ofstream out(path);
    if (!out) throw NpmpcError("io_error", "cannot write " + path);
    out << dump_cells(tree, t, stage).dump() << "\n";
  }

  std::vector<std::size_t> split_all(const std::vector<std::size_t>& cells, int max_depth, bool inherit) {
    std::vector<std::size_t> kids;
    for (auto i : cells) {
      auto k = split(tree, i, max_depth);
      kids.insert(kids.end(), k.begin(), k.end());
    }
    solve(kids);
    // Children of a feasible cell stay inside its certified ball.
    if (inherit)
      for (auto k : kids) tree.cells[k].status = CellStatus::Feasible;
    return kids;
  }

  void stage_feasibility() {
    for (;;) {
      std::vector<std::size_t> failing;
      for (auto i : tree.leaves()) {
        Cell& c = tree.cells[i];
        if (c.status != CellStatus::Pending) continue;
        if (feasible(c)) c.status = CellStatus::Feasible;
        else failing.push_back(i);
      }
      if (failing.empty()) return;
      for (auto i : failing)
        if (tree.cells[i].depth >= tree.k_max) {
          const Cell& c = tree.cells[i];
          throw NpmpcError("assumption3_violated",
                           fmt::format("cell at [{}] radius {} still infeasible at depth cap {}",
                                       fmt::join(c.center.data(), c.center.data() + c.center.size(), ", "), c.radius,
                                       tree.k_max));
        }
      split_all(failing, tree.k_max, false);
      ++t;
      ++rep.iterations_feasibility;
      dump("feasibility");
    }
  }

  void stage_beta() {
    const long long b = tree.branching();
    tree.K = 0;
    while (tree.N >= tree.K) {
      std::vector<std::size_t> failing;
      for (auto i : tree.leaves()) {
        Cell& c = tree.cells[i];
        if (c.status != CellStatus::Feasible) continue;
        if (beta_ok(c)) c.status = CellStatus::BetaOk;
        else failing.push_back(i);
      }
      if (failing.empty()) return;
      const long long left = tree.N - tree.K;
      if (b * static_cast<long long>(failing.size()) <= left) {
        split_all(failing, 1 << 20, true);
        tree.K += b * static_cast<long long>(failing.size());
      } else {
        const long long q = left / b;
        std::vector<std::pair<double, std::size_t>> ranked;
        for (auto i : failing) {
          const Cell& c = tree.cells[i];
          const double e = c.transition
                               ? rel_err_bound(opts.lambda, c.radius, c.transition->j, opts.eta).as_double()
                               : std::numeric_limits<double>::infinity();
          ranked.emplace_back(e, i);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& c) {
          if (a.first != c.first) return a.first > c.first;
          if (tree.cells[a.second].depth != tree.cells[c.second].depth)
            return tree.cells[a.second].depth < tree.cells[c.second].depth;
          return a.second < c.second;
        });
        std::vector<std::size_t> pick;
        for (long long k = 0; k < q; ++k) pick.push_back(ranked[k].second);
        if (!pick.empty()) {
          split_all(pick, 1 << 20, true);
          tree.K += b * q;
          ++t;
          ++rep.iterations_beta;
          dump("beta");
        }
        rep.budget_exhausted = true;
        break;
      }
      ++t;
      ++rep.iterations_beta;
      dump("beta");
    }
    rep.budget_exhausted = true;
    // Final pass so the report reflects the children of the last split.
    for (auto i : tree.leaves()) {
      Cell& c = tree.cells[i];
      if (c.status == CellStatus::Feasible && beta_ok(c)) c.status = CellStatus::BetaOk;
    }
  }
};

}  // namespace

VerifyResult verify(const System& sys, double eps, const VerifyOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!(opts.beta > 0) || !(opts.eta > 0) || !(opts.lambda > 0))
    throw NpmpcError("precondition", "beta, eta and lambda must be positive");
  if (opts.budget < 0) throw NpmpcError("precondition", "budget must be nonnegative");
  Run run{sys, eps, opts, make_tree(sys.X(), opts.h0, eps, sys.lipschitz().L_f), Dataset(eps, Norm::inf(), sys.hash(), sys.T()),
          {}};
  run.tree.N = opts.budget;
  run.solve(run.tree.roots);
  run.dump("initial");
  run.stage_feasibility();
  run.stage_beta();

  auto& rep = run.rep;
  double vol = 0, full = 1;
  const int n = sys.n();
  for (int i = 0; i < n; ++i) full *= sys.X().hi()(i) - sys.X().lo()(i);
  for (auto i : run.tree.leaves()) {
    const Cell& c = run.tree.cells[i];
    ++rep.leaves;
    if (c.status == CellStatus::BetaOk) vol += std::pow(2 * c.radius, n);
    else rep.uncertified.push_back(i);
  }
  rep.certified_volume_fraction = vol / full;
  rep.fully_certified = rep.uncertified.empty();
  if (rep.fully_certified) rep.budget_exhausted = false;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(run.tree), std::move(run.ds), std::move(rep)};
}

}  // namespace npmpc
