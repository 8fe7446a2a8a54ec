#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "npmpc/dataset.hpp"

namespace npmpc {

/// ((1 + gamma L_f) / (1 - gamma L_f)) L_J; throws
/// "gamma_Lf_condition_failed" unless gamma L_f < 1.
double lambda_min(double gamma, double L_f, double L_J);
double lambda_min(const System& sys);

struct Action {
  Control u;
  std::size_t index = 0;  // dataset index of the selected entry
  double score = 0.0;     // j_index + lambda ||x - x_index||
};

/// Dataset entries sorted by ascending (j, index) in a flat layout. A scan
/// for argmin j_i + lambda d_i can stop at the first j_i above the best score
/// found, since every later score is at least its j.
class ScoreIndex {
 public:
  ScoreIndex() = default;
  explicit ScoreIndex(const Dataset& ds);

  std::size_t size() const { return j_.size(); }
  /// (dataset index, score) of the minimizer; lowest index on ties.
  std::pair<std::size_t, double> argmin(const State& x, double lambda, const Norm& norm) const;
  /// max_i j_i - lambda d_i, scanning from the largest j down.
  double max_lower(const State& x, double lambda, const Norm& norm) const;
  /// Entries inspected by the last argmin on this thread (diagnostics).
  static std::size_t last_visited();

 private:
  double dist(std::size_t k, const State& x, const Norm& norm) const;
  int n_ = 0;
  std::vector<double> x_;  // row-major, sorted order
  std::vector<std::vector<double>> cols_;  // the same coordinates by axis
  std::vector<double> j_;
  std::vector<std::size_t> id_;
};

/// The nonparametric policy: act(x) returns the control of the entry
/// minimizing j_i + lambda ||x - x_i||.
class NppPolicy {
 public:
  NppPolicy(std::shared_ptr<const Dataset> ds, double lambda, std::optional<Norm> norm = std::nullopt);
  NppPolicy(const Dataset& ds, double lambda, std::optional<Norm> norm = std::nullopt);

  /// lambda defaults to lambda_min(sys); without gamma L_f < 1 an explicit
  /// lambda is required and the policy is uncertified.
  static NppPolicy for_system(const Dataset& ds, const System& sys, std::optional<double> lambda = std::nullopt);

  Action act(const State& x) const;
  Action act_bruteforce(const State& x) const;
  double j_upper(const State& x) const;
  double j_lower(const State& x) const;

  double lambda() const { return lambda_; }
  const Norm& norm() const { return norm_; }
  const Dataset& dataset() const { return *ds_; }
  /// True when lambda >= lambda_min for the system it was built for.
  bool certified() const { return certified_; }

 private:
  void require_nonempty() const;
  std::shared_ptr<const Dataset> ds_;
  double lambda_;
  Norm norm_;
  ScoreIndex index_;
  bool certified_ = false;
};

struct LatencyStats {
  std::size_t samples = 0;
  double p50_ns = 0, p90_ns = 0, p99_ns = 0, mean_ns = 0;
};

/// Quantile of a sample by linear interpolation between order statistics.
double quantile(std::vector<double> v, double q);

/// Times `repeats` passes of act() over `queries` on the calling thread,
/// after `warmup` untimed queries.
LatencyStats query_latency_bench(const NppPolicy& policy, const std::vector<State>& queries, int repeats,
                                 int warmup = 100);

}  // namespace npmpc
