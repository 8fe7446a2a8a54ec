#include <doctest.h>

#include "helpers.hpp"
#include "npmpc/certify.hpp"
#include "npmpc/collector.hpp"

using namespace npmpc;
using npmpc::test::vec;

namespace {

// x' = 0.5 x + 0.1 u on [-1,1]^2: every state is feasible at eps = 0.1.
System contracting() {
  nlohmann::json j = {{"name", "contracting"},
                      {"n", 2},
                      {"m", 2},
                      {"A", {{0.5, 0.0}, {0.0, 0.5}}},
                      {"B", {{0.1, 0.0}, {0.0, 0.1}}},
                      {"X_lo", {-1.0, -1.0}},
                      {"X_hi", {1.0, 1.0}},
                      {"U_lo", {-1.0, -1.0}},
                      {"U_hi", {1.0, 1.0}},
                      {"gamma", 1.0},
                      {"T", 3},
                      {"lipschitz", {{"L_f", 0.5}, {"L_u", 0.1}, {"L_J", 4.0}, {"L", 0.5}}}};
  return system_from_json(j);
}

}  // namespace

TEST_SUITE("collector") {
  TEST_CASE("single draw on clqr") {
    const System s = make_clqr();
    const auto r = collect(s, 0.1, 1, 0);
    REQUIRE(r.report.feasible == 1);
    CHECK(r.ds.size() == 10);
    CHECK(r.ds.closed());
  }

  TEST_CASE("zero budget") {
    try {
      collect(make_clqr(), 0.1, 0, 0);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "precondition");
    }
    CHECK_THROWS_AS(collect_grid(make_clqr(), 0.1, 1), NpmpcError);
  }

  TEST_CASE("infeasible draws use budget and are reported") {
    const auto r = collect(make_clqr(), 0.1, 60, 3);
    CHECK(r.report.budget == 60);
    CHECK(r.report.feasible + static_cast<int>(r.report.infeasible_x0.size()) == 60);
    CHECK(r.report.assumption3_violated == !r.report.infeasible_x0.empty());
    for (const auto& x : r.report.infeasible_x0) CHECK(solve_conservative(make_clqr(), x, 0.1).cost.is_infeasible());
  }

  TEST_CASE("results do not depend on the worker count") {
    CollectOptions one, four;
    four.jobs = 4;
    const auto a = collect(make_clqr(), 0.1, 25, 9, one);
    const auto b = collect(make_clqr(), 0.1, 25, 9, four);
    CHECK(a.ds == b.ds);
  }

  TEST_CASE("pendulum grids") {
    CollectOptions co;
    co.dedup = false;
    co.probes = 0;
    const auto g3 = collect_grid(make_pendulum(), 0.0, 3, co);
    CHECK(g3.report.budget == 9);
    CHECK(g3.ds.trajectories() + static_cast<int>(g3.report.infeasible_x0.size()) == 9);
    CHECK(g3.ds.size() <= 900);
    CHECK(g3.ds.size() == static_cast<std::size_t>(100 * g3.report.feasible));
  }

  TEST_CASE("grid with 11 points per axis spends 121 solves") {
    CollectOptions co;
    co.probes = 0;
    const auto g = collect_grid(make_clqr(), 0.1, 11, co);
    CHECK(g.report.budget == 121);
    CollectOptions nd = co;
    nd.dedup = false;
    const auto raw = collect_grid(make_clqr(), 0.1, 11, nd);
    CHECK(g.ds.size() <= raw.ds.size());
  }

  TEST_CASE("condition 1 cannot hold on clqr at eps 0.1") {
    // (3,3) is infeasible and every feasible state is at least 0.1 away,
    // which exceeds the required radius eps / L_f.
    const System s = make_clqr();
    CHECK(solve_conservative(s, vec({3, 3}), 0.1).cost.is_infeasible());
    const double need = 0.1 / 1.1;
    for (double a = 0.0; a <= need + 1e-12; a += need / 20)
      for (double b = 0.0; b <= need + 1e-12; b += need / 20)
        CHECK(solve_conservative(s, vec({3 - a, 3 - b}), 0.1).cost.is_infeasible());
  }

  TEST_CASE("sample-complexity budget yields an eps/L_f cover with high probability") {
    const System s = contracting();
    const double eps = 0.1, beta = 5.0, eta = 0.5, delta = 0.1, lambda = 4.0;
    const auto sc = sample_complexity(s, beta, eta, delta, eps, lambda);
    const int N = static_cast<int>(sc.n_bound);
    MESSAGE("r = " << sc.r << ", N_bound = " << N);
    int holds = 0;
    CollectOptions co;
    co.probes = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = collect(s, eps, N, seed, co);
      CHECK(r.report.feasible == N);
      const auto cert = check_recursive_feasibility(r.ds, s);
      if (cert.params["condition1"].get<bool>()) ++holds;
    }
    CHECK(holds >= 18);
  }

  TEST_CASE("report fields") {
    CollectOptions co;
    co.beta = 5.0;
    co.eta = 2.0;
    co.delta = 0.1;
    co.lambda = 1.0;
    co.probes = 256;
    const auto r = collect(make_clqr(), 0.1, 10, 1, co);
    REQUIRE(r.report.pac);
    CHECK(r.report.pac->n_bound_2r <= r.report.pac->n_bound);
    CHECK(r.report.largest_gap > 0.0);
    const auto j = r.report.to_json();
    CHECK(j.contains("sample_complexity"));
    CHECK(j.contains("largest_uncovered_radius_estimate"));
  }
}
