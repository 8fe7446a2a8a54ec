#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "npmpc/systems.hpp"

using namespace npmpc;
using npmpc::test::vec;

TEST_SUITE("systems") {
  TEST_CASE("clqr dynamics") {
    const System s = make_clqr();
    CHECK(step(s, vec({0, 0}), vec({0})) == vec({0, 0}));
    CHECK(step(s, vec({1, 0}), vec({0})) == vec({1, 0}));
    CHECK(step(s, vec({1, 2}), vec({1})) == vec({1 + 0.2 + 0.15, 3}));
    CHECK(s.X() == Box::cube(2, 3.0));
    CHECK(s.U() == Box::cube(1, 2.0));
    CHECK(s.T() == 10);
    CHECK(s.lipschitz().L_f == doctest::Approx(1.1).epsilon(1e-15));
  }

  TEST_CASE("every benchmark has the origin as an equilibrium") {
    for (const char* name : {"clqr", "min_time", "pendulum"}) {
      const System s = make_builtin(name);
      const State y = step(s, State::Zero(s.n()), Control::Zero(s.m()));
      CHECK(y.lpNorm<Eigen::Infinity>() <= 1e-12);
      CHECK(s.X().contains(State::Zero(s.n())));
      CHECK(s.gamma() > 0.0);
      CHECK(s.gamma() <= 1.0);
    }
  }

  TEST_CASE("pendulum parameters") {
    const System s = make_pendulum();
    CHECK(step(s, vec({0, 0}), vec({0})) == vec({0, 0}));
    CHECK(s.lipschitz().L_u > 0.0);
    CHECK(s.T() == 100);
    CHECK(s.X() == Box::cube(2, 2.0));
    CHECK(s.U() == Box::cube(1, 5.0));
  }

  TEST_CASE("min-time stage cost") {
    const System s = make_min_time();
    CHECK(s.stage_cost(vec({0, 0}), vec({0.5})) == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(s.T() == 200);
    CHECK(s.terminal_cost(vec({0, 0})).finite());
    CHECK(s.terminal_cost(vec({0.5, 0})).is_infeasible());
  }

  TEST_CASE("stage costs are nonnegative on samples") {
    for (const char* name : {"clqr", "min_time", "pendulum"}) {
      const System s = make_builtin(name);
      for (const auto& x : uniform_grid(s.X(), 7))
        for (const auto& u : uniform_grid(s.U(), 5)) CHECK(s.stage_cost(x, u) >= 0.0);
    }
  }

  TEST_CASE("trajectory cost") {
    const System s = make_clqr();
    const std::vector<Control> zeros(10, vec({0}));
    CHECK(rollout_cost(s, vec({0, 0}), zeros).value() == 0.0);
    CHECK(rollout_cost(s, vec({10, 0}), zeros).is_infeasible());
    CHECK_THROWS_AS(rollout_cost(s, vec({0, 0}), std::vector<Control>(3, vec({0}))), NpmpcError);
    // One step from (1,0) with u=0: stage cost x'Qx = 1, no terminal cost.
    CHECK(trajectory_cost(s, vec({1, 0}), {vec({0})}).value() == doctest::Approx(1.0));
    // Successor outside the eroded set.
    CHECK(trajectory_cost(s, vec({2.95, 0}), {vec({0})}, 0.1).is_infeasible());
  }

  TEST_CASE("pendulum three-step hand rollout") {
    const System s = make_pendulum().with_horizon(3);
    const double dt = 0.05, g = 9.82;
    double x1 = 0.5, x2 = 0.0, cost = 0.0;
    for (int t = 0; t < 3; ++t) {
      cost += x1 * x1 + 0.1 * x2 * x2;
      const double n1 = x1 + dt * x2;
      const double n2 = x2 + dt * (-g * std::sin(x1));
      x1 = n1;
      x2 = n2;
    }
    const double got = rollout_cost(s, vec({0.5, 0}), std::vector<Control>(3, vec({0}))).value();
    CHECK(got == doctest::Approx(cost).epsilon(1e-14));
  }

  TEST_CASE("bellman residual") {
    const System z = npmpc::test::zero_cost_system(1.0);
    auto pi = [](const State&) { return vec({0}); };
    CHECK(bellman_residual(z, [](const State&) { return Cost(0.0); }, pi, vec({0.3})).value() == 0.0);
    CHECK(bellman_residual(z, [](const State&) { return Cost(1.0); }, pi, vec({0.3})).value() == 0.0);
  }

  TEST_CASE("constructor validation") {
    System::Spec s = make_clqr().spec();
    s.gamma = 0.0;
    CHECK_THROWS_AS(System{s}, NpmpcError);
    s = make_clqr().spec();
    s.T = 0;
    CHECK_THROWS_AS(System{s}, NpmpcError);
    s = make_clqr().spec();
    s.X = Box(vec({1, 1}), vec({2, 2}));
    CHECK_THROWS_AS(System{s}, NpmpcError);
  }

  TEST_CASE("json round trip and hash") {
    const System s = make_clqr();
    const System t = system_from_json(s.to_json());
    CHECK(t.hash() == s.hash());
    CHECK(make_clqr().with_gamma(0.5).hash() != s.hash());
    nlohmann::json j = {{"name", "lti"},      {"n", 1},         {"m", 1},           {"A", {{0.5}}},
                        {"B", {{1.0}}},       {"X_lo", {-1.0}}, {"X_hi", {1.0}},    {"U_lo", {-1.0}},
                        {"U_hi", {1.0}},      {"gamma", 0.9},   {"T", 5}};
    const System g = system_from_json(j);
    CHECK(g.lipschitz().L_f == 0.5);
    CHECK(g.lipschitz().L_u == 1.0);
    CHECK(step(g, vec({1}), vec({0.5})) == vec({1.0}));
  }
}
