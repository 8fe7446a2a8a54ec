#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmpc/policy.hpp"
#include "npmpc/solver.hpp"

namespace npmpc {

/// A state-feedback law; nullopt means the controller has no feasible action.
struct Controller {
  std::string id;
  std::function<std::optional<Control>(const State&)> act;
};

Controller npp_controller(std::shared_ptr<const NppPolicy> policy, std::string id = "npp");
/// Receding horizon: solve the H-step eroded problem, apply the first control.
Controller mpc_controller(const System& sys, double eps, int H, const SolverOptions& opts = {},
                          std::string id = "");

struct RolloutReport {
  std::string controller_id;
  State x0;
  std::vector<State> states;
  std::vector<Control> controls;
  double realized_cost = 0.0;  // +inf when truncated or the terminal cost is infeasible
  bool violated = false;       // some state left X or some control left U
  bool truncated = false;      // the controller returned no action
  std::vector<std::int64_t> latency_ns;
};

/// Closed loop for `steps` steps (default T) from x0 in X; realized cost is
/// sum_t gamma^t c(x_t,u_t) + gamma^steps F(x_steps), computed here from the
/// recorded trajectory.
RolloutReport rollout(const System& sys, const Controller& ctrl, const State& x0, int steps = -1);

/// (realized - baseline) / (baseline + eta'), eta' = 0 when baseline > 0 and
/// eta otherwise.
double relative_gap(const RolloutReport& r, double baseline_J, double eta);
double relative_gap(double realized, double baseline_J, double eta);

struct TradeoffOptions {
  double eps = 0.0;
  std::vector<int> grids{3, 5, 7, 9, 11};
  std::vector<int> horizons{5, 10, 20, 50};
  int M = 100;
  std::uint64_t seed = 7;
  int jobs = 1;
  std::optional<double> lambda;  // default: lambda_min when certifiable, else L_J
  double eta = 0.01;
  std::string baseline = "auto";  // auto | dp | mpc
  int dp_grid = 201;
  int dp_control_grid = 101;
  std::string oracle_cache;
  int warmup = 100;
  SolverOptions solver;
  SolverOptions mpc_solver{1e-8, 10000, 0, 0, true};
};

struct TradeoffSample {
  std::string controller;
  int x0_index = 0;
  double latency_ns = 0.0;  // median per-step latency of the rollout
  double realized_cost = 0.0;
  double baseline_cost = 0.0;
  double gap = 0.0;
  bool violated = false;
};

struct TradeoffRow {
  std::string controller;
  std::size_t dataset_size = 0;  // NPP only
  double lambda = 0.0;           // NPP only
  double latency_p25 = 0, latency_p50 = 0, latency_p75 = 0, latency_p90 = 0, latency_p99 = 0;
  double gap_p25 = 0, gap_p50 = 0, gap_p75 = 0;
  int violations = 0;
  nlohmann::json to_json() const;
};

struct TradeoffResult {
  std::vector<TradeoffSample> samples;
  std::vector<TradeoffRow> rows;
  std::vector<State> x0s;
  std::vector<std::shared_ptr<const Dataset>> datasets;  // one per grid size
  int redraws = 0;
  std::string baseline_kind;
  double lambda = 0.0;
  bool lambda_certified = false;
  double seconds = 0.0;
  nlohmann::json to_json() const;
  void write_csv(const std::string& path) const;
};

/// NPP on grid datasets of every size in `grids` plus receding-horizon MPC at
/// every H in `horizons`, each rolled out from the same M initial states.
/// Initial states with no finite baseline are redrawn and counted. Rollouts
/// run on the calling thread so latencies are not skewed by contention.
TradeoffResult tradeoff_study(const System& sys, const TradeoffOptions& opts);

}  // namespace npmpc
