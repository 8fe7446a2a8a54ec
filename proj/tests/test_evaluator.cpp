#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "npmpc/certify.hpp"
#include "npmpc/evaluator.hpp"
#include "npmpc/rng.hpp"
#include "npmpc/verifier.hpp"

using namespace npmpc;
using npmpc::test::vec;

TEST_SUITE("evaluator") {
  TEST_CASE("relative gap") {
    CHECK(relative_gap(2.0, 2.0, 0.01) == 0.0);
    CHECK(relative_gap(4.0, 2.0, 0.01) == doctest::Approx(1.0));
    CHECK(relative_gap(0.01, 0.0, 0.01) == doctest::Approx(1.0));
    CHECK(std::isinf(relative_gap(std::numeric_limits<double>::infinity(), 1.0, 0.01)));
    CHECK_THROWS_AS(relative_gap(1.0, -1.0, 0.01), NpmpcError);
  }

  TEST_CASE("policy at the clqr origin") {
    const System s = make_clqr();
    auto ds = std::make_shared<Dataset>(0.1, Norm::inf(), s.hash(), s.T());
    ingest_trajectory(*ds, s, solve_conservative(s, vec({0, 0}), 0.1));
    const auto pol = std::make_shared<const NppPolicy>(ds, 1.0);
    const auto r = rollout(s, npp_controller(pol), vec({0, 0}));
    CHECK(r.realized_cost == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(r.violated);
    CHECK_FALSE(r.truncated);
    CHECK(r.states.size() == static_cast<std::size_t>(s.T() + 1));
    CHECK(r.controls.size() == static_cast<std::size_t>(s.T()));
    CHECK(r.latency_ns.size() == static_cast<std::size_t>(s.T()));
  }

  TEST_CASE("realized cost matches the recorded trajectory") {
    const System s = make_pendulum();
    const auto r = rollout(s, mpc_controller(s, 0.0, 5), vec({0.3, -0.2}));
    REQUIRE_FALSE(r.truncated);
    CHECK(r.controller_id == "mpc_H5");
    const Cost c = trajectory_cost(s, r.x0, r.controls);
    REQUIRE_FALSE(c.is_infeasible());
    CHECK(r.realized_cost == doctest::Approx(c.value()).epsilon(1e-12));
  }

  TEST_CASE("a controller without an action truncates the rollout") {
    const System s = make_clqr();
    Controller none{"none", [](const State&) { return std::optional<Control>{}; }};
    const auto r = rollout(s, none, vec({1, 1}));
    CHECK(r.truncated);
    CHECK(std::isinf(r.realized_cost));
  }

  TEST_CASE("mpc with the full horizon applies the optimal first control") {
    const System s = make_clqr();
    const State x0 = vec({1.0, -0.5});
    const auto opt = solve_conservative(s, x0, 0.1);
    REQUIRE_FALSE(opt.cost.is_infeasible());
    const auto u = mpc_controller(s, 0.1, s.T()).act(x0);
    REQUIRE(u);
    CHECK((*u - opt.controls[0]).lpNorm<Eigen::Infinity>() < 1e-5);
  }

  TEST_CASE("certified verifier dataset keeps rollouts inside the constraints") {
    const System s = make_clqr();
    auto v = verify(s, 0.1, VerifyOptions{});
    REQUIRE(v.report.fully_certified);
    REQUIRE(check_recursive_feasibility(v.ds, s).holds);
    const auto ds = std::make_shared<Dataset>(v.ds);
    const auto pol = std::make_shared<const NppPolicy>(ds, 1.0);
    const auto ctrl = npp_controller(pol);
    int violations = 0, uncovered = 0, covered_exits = 0;
    for (int i = 0; i < 100; ++i) {
      const auto r = rollout(s, ctrl, counter_sample(s.X(), 11, i));
      if (r.violated || r.truncated) ++violations;
      for (std::size_t t = 0; t < r.controls.size(); ++t) {
        const auto& e = (*ds)[pol->act(r.states[t]).index];
        const double rad = feas_radius_eq6(s, e.x, e.u, 0.1);
        if ((r.states[t] - e.x).lpNorm<Eigen::Infinity>() > rad) {
          ++uncovered;
        } else if (!s.X().contains(r.states[t + 1])) {
          ++covered_exits;
        }
      }
    }
    MESSAGE(violations << " violating rollouts; " << uncovered
                       << " steps chose an entry whose feasibility ball misses the state");
    // local feasibility: a chosen entry that covers the state keeps the successor in X
    CHECK(covered_exits == 0);
    CHECK(violations == 0);
  }

  TEST_CASE("small tradeoff study") {
    TradeoffOptions o;
    o.grids = {3, 5};
    o.horizons = {5};
    o.M = 4;
    o.dp_grid = 41;
    o.dp_control_grid = 21;
    o.warmup = 2;
    const auto r = tradeoff_study(make_pendulum(), o);
    CHECK(r.samples.size() == 12);
    CHECK(r.rows.size() == 3);
    CHECK(r.x0s.size() == 4);
    CHECK(r.datasets.size() == 2);
    CHECK(r.baseline_kind == "dp");
    for (const auto& row : r.rows) {
      CHECK(row.latency_p25 <= row.latency_p50);
      CHECK(row.latency_p50 <= row.latency_p99);
      CHECK(row.gap_p25 <= row.gap_p75);
    }
    const auto path = std::filesystem::temp_directory_path() / "npmpc_tradeoff.csv";
    r.write_csv(path.string());
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    std::getline(in, line);
    CHECK(line == "controller,x0_index,latency_ns,realized_cost,baseline_cost,gap");
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 12);
    std::filesystem::remove(path);
    const auto j = r.to_json();
    CHECK(j.contains("rows"));
  }
}
