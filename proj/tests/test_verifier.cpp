#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "npmpc/certify.hpp"
#include "npmpc/verifier.hpp"

using namespace npmpc;
using npmpc::test::vec;

namespace {

VerifyResult clqr_run(double h0 = 1.0, long long budget = 1'000'000) {
  VerifyOptions o;
  o.h0 = h0;
  o.budget = budget;
  o.check_tiling = true;
  return verify(make_clqr(), 0.1, o);
}

}  // namespace

TEST_SUITE("verifier") {
  TEST_CASE("initial grid") {
    const auto t = make_tree(Box::cube(2, 3.0), 1.0, 0.1, 1.1);
    CHECK(t.roots.size() == 9);
    CHECK(t.per_axis == 3);
    CHECK(t.branching() == 9);
    // ceil(log3(h0 L_f / eps)) = ceil(log3 11) = 3
    CHECK(t.k_max == 3);
    CHECK(check_tiling(t));
    CHECK_THROWS_AS(make_tree(Box::cube(2, 3.0), 0.7, 0.1, 1.1), NpmpcError);
    CHECK_THROWS_AS(make_tree(Box(vec({-1, -2}), vec({1, 2})), 1.0, 0.1, 1.1), NpmpcError);
  }

  TEST_CASE("split geometry") {
    auto t = make_tree(Box::cube(2, 3.0), 1.0, 0.1, 1.1);
    const std::size_t p = t.roots[8];  // center (2,2)
    t.cells[p].transition = CellTransition{vec({-1.0}), 3.0, 7};
    const State c = t.cells[p].center;
    const auto kids = split(t, p);
    REQUIRE(kids.size() == 9);
    for (auto k : kids) {
      CHECK(t.cells[k].radius == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
      CHECK(t.cells[k].depth == 1);
      CHECK(t.cells[k].parent == p);
    }
    const Cell& mid = t.cells[kids[4]];
    CHECK(mid.center == c);
    REQUIRE(mid.transition);
    CHECK(mid.transition->ds_index == 7);
    CHECK(t.cells[kids[0]].center.isApprox(c + vec({-2.0 / 3, -2.0 / 3})));
    CHECK(t.cells[kids[1]].center.isApprox(c + vec({-2.0 / 3, 0.0})));
    CHECK(t.cells[kids[8]].center.isApprox(c + vec({2.0 / 3, 2.0 / 3})));
    CHECK_FALSE(t.cells[p].leaf());
    CHECK(check_tiling(t));
    CHECK_THROWS_AS(split(t, p), NpmpcError);
    CHECK_THROWS_AS(split(t, kids[0], 0), NpmpcError);
  }

  TEST_CASE("beta test threshold") {
    Cell c;
    c.center = vec({0.0, 0.0});
    c.transition = CellTransition{vec({0.0}), 0.0, 0};
    // threshold beta eta / ((2 + beta) lambda) = 0.05 / 7
    c.radius = 0.01;
    CHECK_FALSE(cell_beta_test(c, 5.0, 0.01, 1.0));
    c.radius = 0.005;
    CHECK(cell_beta_test(c, 5.0, 0.01, 1.0));
    c.transition.reset();
    CHECK_FALSE(cell_beta_test(c, 5.0, 0.01, 1.0));
  }

  TEST_CASE("feasibility test") {
    const System s = make_clqr();
    Cell c;
    c.center = vec({0.0, 0.0});
    c.transition = CellTransition{vec({0.0}), 0.0, 0};
    c.radius = 0.0;
    CHECK(cell_feasibility_test(c, s, 0.1));
    c.radius = 3.0 / 1.1 + 1e-9;
    CHECK_FALSE(cell_feasibility_test(c, s, 0.1));
    c.radius = 3.0 / 1.1 - 1e-9;
    CHECK(cell_feasibility_test(c, s, 0.1));
    c.center = vec({2.95, 0.0});  // f leaves X_{-eps}
    c.radius = 0.0;
    CHECK_FALSE(cell_feasibility_test(c, s, 0.1));
  }

  TEST_CASE("root radii on clqr") {
    const auto r = clqr_run();
    const System s = make_clqr();
    REQUIRE(r.tree.roots.size() == 9);
    for (auto i : r.tree.roots) {
      const Cell& c = r.tree.cells[i];
      REQUIRE(c.transition);
      const double u = c.transition->u[0];
      const double x1 = c.center[0] + 0.1 * c.center[1] + 0.15 * u;
      const double x2 = c.center[1] + u;
      const double hand = std::min(3.0 - std::abs(x1), 3.0 - std::abs(x2)) / 1.1;
      CHECK(feas_radius_eq6(s, c.center, c.transition->u, 0.1) == doctest::Approx(hand).epsilon(1e-12));
      CHECK(hand >= 1.0 - 1e-6);
    }
  }

  TEST_CASE("clqr certification") {
    const auto r = clqr_run();
    CHECK(r.report.fully_certified);
    CHECK_FALSE(r.report.budget_exhausted);
    CHECK(r.report.iterations_feasibility <= 5);
    CHECK(r.report.iterations_beta <= 5);
    CHECK(r.report.uncertified.empty());
    CHECK(r.report.certified_volume_fraction == doctest::Approx(1.0));
    CHECK(r.report.leaves == r.tree.leaves().size());
    CHECK(r.ds.closed());
    CHECK(check_tiling(r.tree));
    CHECK(r.tree.K <= r.tree.N);
    const auto rf = check_recursive_feasibility(r.ds, make_clqr());
    CHECK(rf.holds);
    CHECK(rf.params["condition2"].get<bool>());
    const auto cov = check_theorem2_coverage(r.ds, 1.0, 5.0, 0.01, make_clqr().X());
    CHECK(cov.holds);
    // the relative target is hardest near the origin
    int dmax = 0;
    for (auto i : r.tree.leaves()) dmax = std::max(dmax, r.tree.cells[i].depth);
    for (auto i : r.tree.leaves())
      if (r.tree.cells[i].depth == dmax) CHECK(r.tree.cells[i].center.lpNorm<Eigen::Infinity>() < 1.0);
  }

  TEST_CASE("feasibility stage splits a coarse root") {
    const auto r = clqr_run(3.0);
    CHECK(r.report.iterations_feasibility >= 1);
    CHECK(r.tree.roots.size() == 1);
    CHECK_FALSE(r.tree.cells[r.tree.roots[0]].leaf());
    CHECK(r.report.fully_certified);
  }

  TEST_CASE("zero cost system needs no refinement") {
    const System z = npmpc::test::zero_cost_system();
    VerifyOptions o;
    o.h0 = 0.5;
    o.eta = 1.0;  // 5 * 1 / 7 > 0.5
    const auto r = verify(z, 0.0, o);
    CHECK(r.report.fully_certified);
    CHECK(r.report.leaves == 2);
    CHECK(r.report.iterations_beta == 0);  // only refining passes count
    CHECK(r.tree.K == 0);
  }

  TEST_CASE("budget accounting") {
    const auto r = clqr_run(1.0, 100);
    CHECK(r.report.budget_exhausted);
    CHECK_FALSE(r.report.fully_certified);
    CHECK(r.tree.K <= r.tree.N + r.tree.branching());
    CHECK(r.tree.N == 100);
    CHECK_FALSE(r.report.uncertified.empty());
    CHECK(r.report.certified_volume_fraction < 1.0);
    CHECK(check_tiling(r.tree));
  }

  TEST_CASE("cell dumps") {
    const auto dir = std::filesystem::temp_directory_path() / "npmpc_verifier_dump";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    VerifyOptions o;
    o.dump_pattern = (dir / "cells_{t}.json").string();
    const auto r = verify(make_clqr(), 0.1, o);
    const int iters = r.report.iterations_feasibility + r.report.iterations_beta;
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      (void)e;
      ++files;
    }
    CHECK(files >= iters);
    std::ifstream in(dir / "cells_1.json");
    REQUIRE(in);
    nlohmann::json j;
    in >> j;
    CHECK(j.contains("cells"));
    std::filesystem::remove_all(dir);
  }
}
