#include <doctest.h>

#include "helpers.hpp"
#include "npmpc/dp_oracle.hpp"
#include "npmpc/solver.hpp"

using namespace npmpc;
using npmpc::test::vec;

TEST_SUITE("solver") {
  TEST_CASE("clqr origin is free") {
    const System s = make_clqr();
    const auto r = solve_conservative(s, vec({0, 0}), 0.1);
    REQUIRE(r.cost.finite());
    CHECK(std::abs(r.cost.value()) <= 1e-12);
    for (const auto& u : r.controls) CHECK(u.lpNorm<Eigen::Infinity>() <= 1e-9);
    const auto u0 = solve_conservative_mpc(s, vec({0, 0}), 0.1, 5);
    REQUIRE(u0);
    CHECK(u0->lpNorm<Eigen::Infinity>() <= 1e-9);
  }

  TEST_CASE("empty erosion is a precondition error") {
    const System s = make_clqr();
    try {
      solve_conservative(s, vec({2.9, 2.9}), 3.1);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "precondition");
    }
    CHECK_THROWS_AS(solve_conservative(s, vec({4, 0}), 0.0), NpmpcError);
  }

  TEST_CASE("clqr cost agrees with the DP oracle") {
    const System s = make_clqr();
    const auto r = solve_conservative(s, vec({1, 1}), 0.0);
    REQUIRE(r.cost.finite());
    DPOptions o;
    o.state_grid = {201, 201};
    o.control_grid = {101};
    const DPOracle dp = dp_build(s, 0.0, o);
    const double J = dp_query(dp, vec({1, 1})).value();
    // Gridded value iteration only overestimates up to interpolation error.
    CHECK(r.cost.value() <= J + 1e-6);
    CHECK(std::abs(r.cost.value() - J) <= 0.02 * J);
  }

  TEST_CASE("solution is consistent with its own trajectory") {
    const System s = make_clqr();
    const auto r = solve_conservative(s, vec({-2, 1.5}), 0.1);
    REQUIRE(r.cost.finite());
    CHECK(r.states.size() == 11);
    CHECK(rollout_cost(s, vec({-2, 1.5}), r.controls, 0.1).value() == doctest::Approx(r.cost.value()));
    for (std::size_t t = 1; t < r.states.size(); ++t) CHECK(erode(s.X(), 0.1).contains(r.states[t]));
  }

  TEST_CASE("clqr corner is infeasible") {
    const auto r = solve_conservative(make_clqr(), vec({3, 3}), 0.1);
    CHECK(r.status == SolveStatus::Infeasible);
    CHECK(r.cost.is_infeasible());
  }

  TEST_CASE("mpc with H = T reproduces the first control") {
    const System s = make_clqr();
    const auto r = solve_conservative(s, vec({1, -1}), 0.1);
    const auto u0 = solve_conservative_mpc(s, vec({1, -1}), 0.1, s.T());
    REQUIRE(u0);
    CHECK((*u0 - r.controls.front()).lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK_THROWS_AS(solve_conservative_mpc(s, vec({1, -1}), 0.1, 0), NpmpcError);
  }

  TEST_CASE("pendulum torque is restoring") {
    const System s = make_pendulum();
    const auto u0 = solve_conservative_mpc(s, vec({0.5, 0}), 0.0, 20);
    REQUIRE(u0);
    CHECK((*u0)[0] < 0.0);
  }

  TEST_CASE("min-time reaches the terminal set") {
    const System s = make_min_time();
    const auto r = solve_conservative(s, vec({-1.5, 0.5}), 0.0);
    REQUIRE(r.cost.finite());
    CHECK(r.states.back().lpNorm<Eigen::Infinity>() <= 1e-3);
    // Optimum of the same LP computed offline with an interior-point solver: 249.9.
    CHECK(r.cost.value() == doctest::Approx(249.9).epsilon(2e-3));
  }

  TEST_CASE("solves are deterministic") {
    const System s = make_pendulum();
    const auto a = solve_conservative(s, vec({0.3, -0.2}), 0.0);
    const auto b = solve_conservative(s, vec({0.3, -0.2}), 0.0);
    CHECK(a.cost == b.cost);
  }

  TEST_CASE("feasibility audit") {
    const auto a = audit_assumption3(make_clqr(), 0.1, 50, 3);
    CHECK(a.samples == 50);
    const auto z = audit_assumption3(npmpc::test::zero_cost_system(), 0.0, 20, 3);
    CHECK(z.holds());
    CHECK_NOTHROW(require_assumption3(z));
    Assumption3Audit bad;
    bad.violations.push_back(vec({1}));
    CHECK_THROWS_AS(require_assumption3(bad), NpmpcError);
  }
}

TEST_SUITE("dp_oracle") {
  TEST_CASE("zero-cost system has zero tables") {
    DPOptions o;
    o.state_grid = {21};
    o.control_grid = {5};
    const DPOracle dp = dp_build(npmpc::test::zero_cost_system(), 0.0, o);
    for (const auto& layer : dp.J)
      for (double v : layer) CHECK(v == 0.0);
  }

  TEST_CASE("clqr oracle basics") {
    const System s = make_clqr();
    DPOptions o;
    o.state_grid = {101, 101};
    o.control_grid = {101};
    const DPOracle dp = dp_build(s, 0.1, o);
    CHECK(dp_query(dp, vec({0, 0})).value() == 0.0);
    CHECK(dp_query(dp, vec({3, 3})).is_infeasible());
    // Interior query lies between its cell's corner values.
    const State x = vec({0.71, -0.43});
    const double v = dp_query(dp, x).value();
    const double px = 6.0 / 100, lo0 = std::floor((x[0] + 3) / px) * px - 3, lo1 = std::floor((x[1] + 3) / px) * px - 3;
    double mn = 1e300, mx = -1e300;
    for (double a : {lo0, lo0 + px})
      for (double b : {lo1, lo1 + px}) {
        const double c = dp_query(dp, vec({a, b})).value();
        mn = std::min(mn, c);
        mx = std::max(mx, c);
      }
    CHECK(v >= mn - 1e-9);
    CHECK(v <= mx + 1e-9);
    // Greedy action at the equilibrium and the Bellman residual there.
    const auto u = dp_greedy(dp, s, 0, vec({0, 0}));
    REQUIRE(u);
    CHECK(std::abs((*u)[0]) <= 1e-12);
  }

  TEST_CASE("larger erosion never lowers the value") {
    const System s = make_clqr();
    DPOptions o;
    o.state_grid = {41, 41};
    o.control_grid = {41};
    const DPOracle a = dp_build(s, 0.1, o), b = dp_build(s, 0.2, o);
    double worst = 0.0, rel = 0.0;
    int both = 0;
    for (std::size_t i = 0; i < a.J[0].size(); ++i) {
      if (std::isinf(a.J[0][i])) CHECK(std::isinf(b.J[0][i]));
      if (std::isinf(b.J[0][i]) || std::isinf(a.J[0][i])) continue;
      ++both;
      worst = std::max(worst, a.J[0][i] - b.J[0][i]);
      rel = std::max(rel, (a.J[0][i] - b.J[0][i]) / (1 + a.J[0][i]));
    }
    MESSAGE("largest decrease " << worst << " (relative " << rel << ") over " << both << " nodes");
    // interpolation error of the coarse tables, same 2% budget as the solver agreement check
    CHECK(rel <= 0.02);
    // the exact values are monotone
    for (std::size_t i = 0; i < a.J[0].size(); i += 37) {
      const auto x = a.node(0, i);
      const Cost ca = solve_conservative(s, x, 0.1).cost, cb = solve_conservative(s, x, 0.2).cost;
      if (cb.is_infeasible()) continue;
      REQUIRE(ca.finite());
      CHECK(cb.value() >= ca.value() - 1e-6 * (1 + ca.value()));
    }
  }

  TEST_CASE("unsupported systems") {
    try {
      dp_build(make_min_time(), 0.0);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "oracle_unsupported");
    }
  }

  TEST_CASE("save and load round trip") {
    DPOptions o;
    o.state_grid = {21, 21};
    o.control_grid = {11};
    const DPOracle a = dp_build(make_clqr(), 0.1, o);
    const std::string path = "dp_roundtrip.npdp";
    dp_save(a, path);
    const DPOracle b = dp_load(path);
    CHECK(b.J == a.J);
    CHECK(b.greedy == a.greedy);
    CHECK(b.system_hash == a.system_hash);
    const DPOracle c = dp_build_cached(make_clqr(), 0.1, o, path);
    CHECK(c.J == a.J);
    std::remove(path.c_str());
  }
}
