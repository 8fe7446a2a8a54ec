#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "npmpc/certify.hpp"
#include "npmpc/collector.hpp"
#include "npmpc/rng.hpp"

using namespace npmpc;
using npmpc::test::box;
using npmpc::test::vec;

namespace {

Dataset points(const std::vector<State>& xs, const std::vector<double>& js, const Control& u, double eps = 0.0) {
  Dataset ds(eps, Norm::inf(), "h", 1);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Transition t;
    t.x = xs[i];
    t.u = u;
    t.j = js[i];
    ds.append(t);
  }
  return ds;
}

}  // namespace

TEST_SUITE("certify") {
  TEST_CASE("feasibility radius at the origin") {
    const System s = make_clqr();
    CHECK(feas_radius_eq6(s, vec({0, 0}), vec({0}), 0.1) == doctest::Approx(3.0 / 1.1).epsilon(1e-15));
    try {
      feas_radius_eq6(s, vec({2.95, 0}), vec({0}), 0.1);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "not_one_step_feasible");
    }
  }

  TEST_CASE("successor exactly eps from the boundary gives eps / L_f") {
    const System s = make_clqr();
    // x = (2.9, 0), u = 0 -> (2.9, 0), distance 0.1 to the face x1 = 3.
    CHECK(feas_radius_eq6(s, vec({2.9, 0}), vec({0}), 0.1) == doctest::Approx(0.1 / 1.1).epsilon(1e-12));
  }

  TEST_CASE("feasible pairs have radius at least eps / L_f") {
    for (const char* name : {"clqr", "pendulum", "min_time"}) {
      const System s = make_builtin(name);
      const double eps = 0.1;
      std::mt19937_64 rng(5);
      int seen = 0;
      for (int i = 0; i < 20000 && seen < 1000; ++i) {
        const State x = counter_sample(s.X(), 41, static_cast<std::uint64_t>(i));
        const Control u = counter_sample(s.U(), 43, static_cast<std::uint64_t>(i));
        if (!one_step_feasible(s, x, u, eps)) continue;
        ++seen;
        CHECK(feas_radius_eq6(s, x, u, eps) >= eps / s.lipschitz().L_f * (1 - 1e-12));
      }
      CHECK(seen == 1000);
    }
  }

  TEST_CASE("local feasibility holds on sampled balls") {
    for (const char* name : {"clqr", "pendulum", "min_time"}) {
      const System s = make_builtin(name);
      int pairs = 0;
      for (int i = 0; i < 5000 && pairs < 50; ++i) {
        const State x = counter_sample(s.X(), 47, static_cast<std::uint64_t>(i));
        const Control u = counter_sample(s.U(), 53, static_cast<std::uint64_t>(i));
        if (!one_step_feasible(s, x, u, 0.05)) continue;
        ++pairs;
        const double r = feas_radius_eq6(s, x, u, 0.05);
        const Box ball(x.array() - r, x.array() + r);
        int bad = 0;
        for (int k = 0; k < 1000; ++k) {
          const State y = counter_sample(ball, 59 + i, static_cast<std::uint64_t>(k));
          if (!s.X().contains(y)) continue;
          if (!s.X().contains(s.dynamics(y, u))) ++bad;
        }
        CHECK_MESSAGE(bad == 0, name);
      }
    }
  }

  TEST_CASE("box radius and the origin-centered radii") {
    CHECK(box_radius_R(Box::cube(2, 3.0)) == 3.0);
    CHECK(box_radius_R(box({-1, -2}, {4, 0.5})) == 0.5);
    CHECK(box_radius_R(box({1}, {2})) == 0.0);
    const System s = make_clqr();
    CHECK(feas_radius_xu(s, vec({0, 0}), vec({0})) == doctest::Approx(3.0 / 1.1));
    // Appendix-style radius never exceeds the exact one for a centered box.
    for (int i = 0; i < 1000; ++i) {
      const State xp = counter_sample(s.X(), 61, static_cast<std::uint64_t>(i));
      CHECK(feas_radius_xprime(s, xp) <= dist_to_boundary(xp, s.X()).dist / 1.1 + 1e-12);
    }
  }

  TEST_CASE("recursive feasibility conditions") {
    const System s = make_clqr();
    const double eps = 0.1, Lf = 1.1;
    // Grid at pitch <= 2 eps / L_f over an inner box whose points are all one-step feasible with u=0.
    const Box inner = Box::cube(2, 1.0);
    const int g = static_cast<int>(std::ceil(2.0 / (2 * eps / Lf))) + 1;
    std::vector<State> xs = uniform_grid(inner, g);
    Dataset ds = points(xs, std::vector<double>(xs.size(), 1.0), vec({0}), eps);
    System::Spec spec = s.spec();
    spec.X = inner;
    spec.builtin.clear();
    // Inner system: origin-symmetric dynamics scaled to keep the grid feasible.
    spec.dynamics = [](const State& x, const Control&) { return State(0.5 * x); };
    spec.linear.reset();
    spec.lipschitz.L_f = Lf;
    const System sub(spec);
    const auto rep = check_recursive_feasibility(ds, sub, CoverOptions{1e-12});
    CHECK(rep.params["condition1"].get<bool>());
    CHECK(rep.holds);

    const auto none = check_recursive_feasibility(Dataset(eps, Norm::inf(), "h", 1), s);
    CHECK_FALSE(none.holds);
  }

  TEST_CASE("coverage certificate") {
    const auto rep = check_theorem2_coverage(points({vec({0, 0})}, {0.0}, vec({0})), 1.0, 5.0, 0.01, Box::cube(2, 3.0));
    CHECK_FALSE(rep.holds);
    REQUIRE(rep.witness);
    CHECK(coverage_radius(5.0, 0.01, 1.0, 0.0) == doctest::Approx(0.05 / 7).epsilon(1e-14));
    // Radii (j + eta) beta / ((2 + beta) lambda) = 0.5 tile the 3x3 grid over [-1,1]^2.
    const auto grid = uniform_grid(Box::cube(2, 1.0), 3);
    const double j = 0.5 * 7.0 / 5.0 - 0.01;
    const auto ok = check_theorem2_coverage(points(grid, std::vector<double>(9, j), vec({0})), 1.0, 5.0, 0.01,
                                            Box::cube(2, 1.0), CoverOptions{1e-12});
    CHECK(ok.holds);
  }

  TEST_CASE("gap translation") {
    CHECK(translate_gap(0.3, 0.01, 0.0, 0.1) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(translate_gap(0.0, 0.01, 2.0, 0.001) == doctest::Approx(0.002 / 0.008).epsilon(1e-14));
    for (double beta : {0.1, 1.0, 5.0}) {
      const double bp = inverse_translate_gap(beta, 0.1, 2.0, 0.01);
      CHECK(std::abs(translate_gap(bp, 0.1, 2.0, 0.01) - beta) <= 1e-12 * beta);
    }
    try {
      translate_gap(1.0, 0.01, 1.0, 0.01);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "eta_too_small");
    }
  }

  TEST_CASE("relative error bound") {
    CHECK(rel_err_bound(1.0, 0.0, 1.0, 0.01).value() == 0.0);
    CHECK(rel_err_bound(1.0, 0.1, 1.0, 0.01).value() == doctest::Approx(0.2 / 0.91).epsilon(1e-14));
    CHECK(rel_err_bound(1.0, 1.01, 1.0, 0.01).is_infeasible());
    CHECK(rel_err_bound(1.0, 2.0, 1.0, 0.01).is_infeasible());
  }

  TEST_CASE("sample complexity") {
    const System s = make_clqr().with_lipschitz({1.1, 1.15, std::nullopt, 20.0, 1e-12});
    const auto z = sample_complexity(s, 5.0, 0.01, 0.1, 0.0, 1.0);
    CHECK(z.r == doctest::Approx(5 * 0.01 / (2 * 7.0)).epsilon(1e-14));
    // L eps = 1e-13 perturbs r_gap far below the tolerance
    const auto e = sample_complexity(s, 5.0, 0.01, 0.1, 0.1, 1.0);
    CHECK(e.r_gap == doctest::Approx(5 * 0.01 / (2 * 7.0)).epsilon(1e-9));
    CHECK(e.r_feas == doctest::Approx(0.1 / 2.2).epsilon(1e-14));
    CHECK(e.r == std::min(e.r_gap, e.r_feas));
    CHECK(e.n_cover == covering_number_box(s.X(), e.r));
    CHECK(e.n_cover_2r == covering_number_box(s.X(), 2 * e.r));
    // Hand case: r = 0.5 on [-3,3]^2.
    const auto c = covering_number_box(s.X(), 0.5);
    CHECK(c == 36);
    CHECK(std::ceil(36 * std::log(36.0) * std::log(1 / 0.1)) == 298);
    const System L = make_clqr().with_lipschitz({1.1, 1.15, std::nullopt, 20.0, 1.0});
    try {
      sample_complexity(L, 5.0, 0.01, 0.1, 0.1, 1.0);
      FAIL("expected an exception");
    } catch (const NpmpcError& err) {
      CHECK(err.code() == "beta_eta_eps_incompatible");
    }
  }

  TEST_CASE("declared clqr constants dominate sampled estimates") {
    const System s = make_clqr();
    const auto lj = estimate_lipschitz_J(s, 0.1, 60, 5);
    CHECK(lj.feasible > 0);
    CHECK(lj.value <= s.lipschitz().L_J);
    CHECK(estimate_erosion_sensitivity(s, 0.3, 60, 6).value <= s.lipschitz().L);
  }

  TEST_CASE("cost-to-go Lipschitz bound") {
    CHECK(lipschitz_LJ_bound(1.0, 0.5, 1.0, 0.5) == 2.0);
    CHECK(lipschitz_LJ_bound(3.0, 0.0, 7.0, 1.0) == 3.0);
    CHECK_THROWS_AS(lipschitz_LJ_bound(1.0, 1.0, 1.0, 0.5), NpmpcError);
  }

  TEST_CASE("trajectory propagation bound") {
    for (const char* name : {"clqr", "pendulum", "min_time"}) {
      const System s = make_builtin(name);
      const int H = 10;
      std::vector<Control> us(H), vs(H);
      for (int t = 0; t < H; ++t) us[t] = vs[t] = counter_sample(s.U(), 67, static_cast<std::uint64_t>(t));
      const State x0 = counter_sample(s.X(), 71, 0);
      CHECK(propagation_bound_check(s, x0, x0, us, us).holds);
      int failures = 0;
      for (int i = 0; i < 1000; ++i) {
        const State a = counter_sample(s.X(), 73, static_cast<std::uint64_t>(i));
        const State b = counter_sample(s.X(), 79, static_cast<std::uint64_t>(i));
        for (int t = 0; t < H; ++t) vs[t] = counter_sample(s.U(), 83 + i, static_cast<std::uint64_t>(t));
        if (!propagation_bound_check(s, a, b, us, vs).holds) ++failures;
        // Same controls: one step contracts by at most L_f.
        const double d1 = (s.dynamics(a, us[0]) - s.dynamics(b, us[0])).lpNorm<Eigen::Infinity>();
        CHECK(d1 <= s.lipschitz().L_f * (a - b).lpNorm<Eigen::Infinity>() * (1 + 1e-12) + 1e-15);
      }
      CHECK_MESSAGE(failures == 0, name);
    }
  }
}
