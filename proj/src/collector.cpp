#include "npmpc/collector.hpp"

#include <fmt/format.h>

#include "npmpc/parallel.hpp"
#include "npmpc/rng.hpp"

namespace npmpc {

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

CollectResult run(const System& sys, double eps, const std::vector<State>& x0s, const CollectOptions& opts,
                  std::uint64_t probe_seed) {
  if (erode(sys.X(), eps).empty()) throw NpmpcError("precondition", "eroded state set is empty");
  std::vector<SolveResult> results(x0s.size());
  parallel_for(x0s.size(), opts.jobs,
               [&](std::size_t i) { results[i] = solve_conservative(sys, x0s[i], eps, opts.solver); });

  CollectResult out{Dataset(eps, Norm::inf(), sys.hash(), sys.T()), {}};
  auto& rep = out.report;
  rep.budget = static_cast<int>(x0s.size());
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    if (results[i].status == SolveStatus::Infeasible) {
      rep.infeasible_x0.push_back(x0s[i]);
      continue;
    }
    ingest_trajectory(out.ds, sys, results[i]);
    ++rep.feasible;
  }
  rep.assumption3_violated = !rep.infeasible_x0.empty();
  if (opts.dedup) out.ds = deduplicate(out.ds);
  rep.transitions = out.ds.size();

  if (!out.ds.empty() && opts.probes > 0) {
    std::vector<double> gap(opts.probes);
    std::vector<State> at(opts.probes);
    parallel_for(static_cast<std::size_t>(opts.probes), opts.jobs, [&](std::size_t k) {
      at[k] = counter_sample(sys.X(), probe_seed, k);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& t : out.ds.transitions()) best = std::min(best, (t.x - at[k]).lpNorm<Eigen::Infinity>());
      gap[k] = best;
    });
    const auto it = std::max_element(gap.begin(), gap.end());
    rep.largest_gap = *it;
    rep.largest_gap_at = at[static_cast<std::size_t>(it - gap.begin())];
  }
  if (opts.beta && opts.eta && opts.delta && opts.lambda)
    rep.pac = sample_complexity(sys, *opts.beta, *opts.eta, *opts.delta, eps, *opts.lambda);
  if (!out.ds.empty()) rep.recursive_feasibility = check_recursive_feasibility(out.ds, sys, CoverOptions{1e-9});
  return out;
}

}  // namespace

nlohmann::json CollectReport::to_json() const {
  nlohmann::json j;
  j["budget"] = budget;
  j["feasible"] = feasible;
  j["infeasible"] = infeasible_x0.size();
  nlohmann::json bad = nlohmann::json::array();
  for (const auto& x : infeasible_x0) bad.push_back(vec_json(x));
  j["infeasible_x0"] = bad;
  j["assumption3_violated"] = assumption3_violated;
  j["transitions"] = transitions;
  j["largest_uncovered_radius_estimate"] = largest_gap;
  if (largest_gap_at) j["largest_uncovered_at"] = vec_json(*largest_gap_at);
  if (pac) j["sample_complexity"] = pac->to_json();
  if (recursive_feasibility) j["recursive_feasibility"] = recursive_feasibility->to_json();
  return j;
}

CollectResult collect(const System& sys, double eps, int N, std::uint64_t seed, const CollectOptions& opts) {
  if (N < 1) throw NpmpcError("precondition", "budget N must be >= 1");
  std::vector<State> x0s(N);
  for (int i = 0; i < N; ++i) x0s[i] = counter_sample(sys.X(), seed, static_cast<std::uint64_t>(i));
  return run(sys, eps, x0s, opts, mix64(seed ^ 0x5eedULL));
}

CollectResult collect_grid(const System& sys, double eps, int g, const CollectOptions& opts) {
  if (g < 2) throw NpmpcError("precondition", "grid needs g >= 2 points per axis");
  return run(sys, eps, uniform_grid(sys.X(), g), opts, static_cast<std::uint64_t>(g));
}

}  // namespace npmpc
