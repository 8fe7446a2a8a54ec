#include "npmpc/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "npmpc/collector.hpp"
#include "npmpc/dp_oracle.hpp"
#include "npmpc/rng.hpp"

namespace npmpc {

Controller npp_controller(std::shared_ptr<const NppPolicy> policy, std::string id) {
  return {std::move(id), [p = std::move(policy)](const State& x) -> std::optional<Control> { return p->act(x).u; }};
}

Controller mpc_controller(const System& sys, double eps, int H, const SolverOptions& opts, std::string id) {
  if (id.empty()) id = fmt::format("mpc_H{}", H);
  return {std::move(id), [sys, eps, H, opts](const State& x) { return solve_conservative_mpc(sys, x, eps, H, opts); }};
}

RolloutReport rollout(const System& sys, const Controller& ctrl, const State& x0, int steps) {
  if (!sys.X().contains(x0)) throw NpmpcError("precondition", "x0 outside X");
  if (steps < 0) steps = sys.T();
  RolloutReport r;
  r.controller_id = ctrl.id;
  r.x0 = x0;
  r.states.push_back(x0);
  double cost = 0.0, disc = 1.0;
  State x = x0;
  for (int t = 0; t < steps; ++t) {
    const auto a = std::chrono::steady_clock::now();
    const auto u = ctrl.act(x);
    const auto b = std::chrono::steady_clock::now();
    r.latency_ns.push_back(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
    if (!u) {
      r.truncated = r.violated = true;
      break;
    }
    if (!sys.U().contains(*u)) r.violated = true;
    cost += disc * sys.stage_cost(x, *u);
    disc *= sys.gamma();
    x = sys.dynamics(x, *u);
    r.controls.push_back(*u);
    r.states.push_back(x);
    if (!sys.X().contains(x)) r.violated = true;
  }
  if (r.truncated) {
    r.realized_cost = std::numeric_limits<double>::infinity();
  } else {
    const Cost F = sys.terminal_cost(x);
    r.realized_cost = F.finite() ? cost + disc * F.value() : std::numeric_limits<double>::infinity();
  }
  return r;
}

double relative_gap(double realized, double baseline_J, double eta) {
  if (baseline_J < 0) throw NpmpcError("precondition", "baseline must be nonnegative");
  const double den = baseline_J > 0 ? baseline_J : eta;
  return (realized - baseline_J) / den;
}

double relative_gap(const RolloutReport& r, double baseline_J, double eta) {
  return relative_gap(r.realized_cost, baseline_J, eta);
}

nlohmann::json TradeoffRow::to_json() const {
  nlohmann::json j = {{"controller", controller},
                      {"latency_ns", {{"p25", latency_p25}, {"p50", latency_p50}, {"p75", latency_p75},
                                      {"p90", latency_p90}, {"p99", latency_p99}}},
                      {"gap", {{"p25", gap_p25}, {"p50", gap_p50}, {"p75", gap_p75}}},
                      {"violations", violations}};
  if (dataset_size) {
    j["dataset_size"] = dataset_size;
    j["lambda"] = lambda;
  }
  return j;
}

nlohmann::json TradeoffResult::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) rs.push_back(r.to_json());
  return {{"rows", rs},
          {"M", x0s.size()},
          {"redraws", redraws},
          {"baseline", baseline_kind},
          {"lambda", lambda},
          {"lambda_certified", lambda_certified},
          {"latency_worker", "single thread, rollouts run sequentially"},
          {"seconds", seconds}};
}

void TradeoffResult::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw NpmpcError("io_error", "cannot write " + path);
  out << "controller,x0_index,latency_ns,realized_cost,baseline_cost,gap\n";
  for (const auto& s : samples)
    out << fmt::format("{},{},{:.1f},{:.17g},{:.17g},{:.17g}\n", s.controller, s.x0_index, s.latency_ns,
                       s.realized_cost, s.baseline_cost, s.gap);
}

TradeoffResult tradeoff_study(const System& sys, const TradeoffOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  if (opts.M < 1) throw NpmpcError("precondition", "M must be >= 1");
  TradeoffResult res;

  // Baseline J(x0, eps).
  std::function<double(const State&)> baseline;
  std::optional<DPOracle> oracle;
  const bool dp_ok = sys.n() <= 3 && !sys.terminal_tol();
  std::string kind = opts.baseline;
  if (kind == "auto") kind = dp_ok ? "dp" : "mpc";
  if (kind == "dp") {
    if (!dp_ok) throw NpmpcError("oracle_unsupported", "no DP oracle for this system");
    DPOptions d;
    d.state_grid.assign(sys.n(), opts.dp_grid);
    d.control_grid.assign(sys.m(), opts.dp_control_grid);
    d.jobs = opts.jobs;
    oracle = opts.oracle_cache.empty() ? dp_build(sys, opts.eps, d) : dp_build_cached(sys, opts.eps, d, opts.oracle_cache);
    baseline = [&](const State& x) { return dp_query(*oracle, x).as_double(); };
  } else if (kind == "mpc") {
    baseline = [&](const State& x) { return solve_conservative(sys, x, opts.eps, opts.solver).cost.as_double(); };
  } else {
    throw NpmpcError("precondition", "baseline must be auto, dp or mpc");
  }
  res.baseline_kind = kind;

  std::vector<double> base;
  for (std::uint64_t i = 0; static_cast<int>(res.x0s.size()) < opts.M; ++i) {
    if (i > static_cast<std::uint64_t>(opts.M) * 100) throw NpmpcError("precondition", "too few feasible initial states");
    State x = counter_sample(sys.X(), opts.seed, i);
    const double b = baseline(x);
    if (!std::isfinite(b)) {
      ++res.redraws;
      continue;
    }
    res.x0s.push_back(x);
    base.push_back(b);
  }

  const bool certifiable = sys.gamma() * sys.lipschitz().L_f < 1;
  res.lambda = opts.lambda.value_or(certifiable ? lambda_min(sys) : sys.lipschitz().L_J);
  res.lambda_certified = certifiable && res.lambda >= lambda_min(sys);

  struct Entry {
    Controller ctrl;
    std::size_t size = 0;
  };
  std::vector<Entry> ctrls;
  for (int g : opts.grids) {
    CollectOptions co;
    co.jobs = opts.jobs;
    co.solver = opts.solver;
    co.probes = 0;
    auto c = collect_grid(sys, opts.eps, g, co);
    if (c.ds.empty()) throw NpmpcError("empty_dataset", fmt::format("grid g={} produced no data", g));
    auto shared = std::make_shared<const Dataset>(std::move(c.ds));
    res.datasets.push_back(shared);
    auto p = std::make_shared<const NppPolicy>(shared, res.lambda);
    ctrls.push_back({npp_controller(p, fmt::format("npp_g{}", g)), shared->size()});
  }
  for (int H : opts.horizons) ctrls.push_back({mpc_controller(sys, opts.eps, H, opts.mpc_solver), 0});

  for (const auto& e : ctrls) {
    for (int w = 0; w < opts.warmup; ++w) (void)e.ctrl.act(counter_sample(sys.X(), opts.seed ^ 0xabcdefULL, w));
    TradeoffRow row;
    row.controller = e.ctrl.id;
    row.dataset_size = e.size;
    row.lambda = e.size ? res.lambda : 0.0;
    std::vector<double> lat, gaps;
    for (std::size_t i = 0; i < res.x0s.size(); ++i) {
      const auto r = rollout(sys, e.ctrl, res.x0s[i]);
      std::vector<double> ns(r.latency_ns.begin(), r.latency_ns.end());
      TradeoffSample s;
      s.controller = e.ctrl.id;
      s.x0_index = static_cast<int>(i);
      s.latency_ns = quantile(ns, 0.5);
      s.realized_cost = r.realized_cost;
      s.baseline_cost = base[i];
      s.gap = relative_gap(r, base[i], opts.eta);
      s.violated = r.violated;
      if (r.violated) ++row.violations;
      lat.insert(lat.end(), ns.begin(), ns.end());
      gaps.push_back(s.gap);
      res.samples.push_back(s);
    }
    row.latency_p25 = quantile(lat, 0.25);
    row.latency_p50 = quantile(lat, 0.5);
    row.latency_p75 = quantile(lat, 0.75);
    row.latency_p90 = quantile(lat, 0.9);
    row.latency_p99 = quantile(lat, 0.99);
    row.gap_p25 = quantile(gaps, 0.25);
    row.gap_p50 = quantile(gaps, 0.5);
    row.gap_p75 = quantile(gaps, 0.75);
    res.rows.push_back(row);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace npmpc
