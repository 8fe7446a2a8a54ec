#include <doctest.h>

#include <cstdio>
#include <random>

#include "helpers.hpp"
#include "npmpc/dataset.hpp"

using namespace npmpc;
using npmpc::test::vec;

namespace {

Dataset one_trajectory(const System& s, const State& x0, double eps) {
  Dataset ds(eps, Norm::inf(), s.hash(), s.T());
  ingest_trajectory(ds, s, solve_conservative(s, x0, eps));
  return ds;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("zero trajectory gives T zero-cost transitions") {
    const System s = make_clqr();
    const Dataset ds = one_trajectory(s, vec({0, 0}), 0.1);
    CHECK(ds.size() == 10);
    for (const auto& t : ds.transitions()) CHECK(t.j == doctest::Approx(0.0).scale(1e-12));
  }

  TEST_CASE("tail sums") {
    const System s = make_clqr();
    const Dataset ds = one_trajectory(s, vec({1.5, -1}), 0.1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& t = ds[i];
      const double next = t.succ ? ds[*t.succ].j : s.terminal_cost(step(s, t.x, t.u)).value();
      CHECK(t.j == doctest::Approx(s.stage_cost(t.x, t.u) + s.gamma() * next).epsilon(1e-12));
    }
  }

  TEST_CASE("pendulum head cost equals the solve cost") {
    const System s = make_pendulum();
    const auto r = solve_conservative(s, vec({0.5, 0}), 0.0);
    Dataset ds(0.0, Norm::inf(), s.hash(), s.T());
    const auto head = ingest_trajectory(ds, s, r);
    CHECK(ds[head].j == doctest::Approx(r.cost.value()).epsilon(1e-10));
    CHECK(ds[head].j == doctest::Approx(rollout_cost(s, vec({0.5, 0}), r.controls).value()).epsilon(1e-10));
  }

  TEST_CASE("closure") {
    const System s = make_clqr();
    Dataset ds = one_trajectory(s, vec({1, 1}), 0.1);
    CHECK(ds.closed());
    CHECK(check_closure(ds));
    CHECK(check_closure(ds, s));
    ds.erase(4);
    CHECK_FALSE(ds.closed());
    CHECK_FALSE(check_closure(ds, s));
  }

  TEST_CASE("infeasible results are rejected") {
    const System s = make_clqr();
    Dataset ds(0.1, Norm::inf(), s.hash(), s.T());
    try {
      ingest_trajectory(ds, s, solve_conservative(s, vec({3, 3}), 0.1));
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "infeasible_result");
    }
    CHECK(ds.empty());
  }

  TEST_CASE("deduplicate keeps the cheaper entry") {
    const System s = make_clqr();
    Dataset ds = one_trajectory(s, vec({0, 0}), 0.1);
    ingest_trajectory(ds, s, solve_conservative(s, vec({0, 0}), 0.1));
    CHECK(ds.size() == 20);
    const Dataset d = deduplicate(ds);
    CHECK(d.size() == 1);
    const Dataset h = heads_only(one_trajectory(s, vec({1, 0}), 0.1));
    CHECK(h.size() == 1);
    CHECK(h[0].step == 0);
  }

  TEST_CASE("save and load round trip") {
    const System s = make_clqr();
    Dataset ds = one_trajectory(s, vec({1, 1}), 0.1);
    ingest_trajectory(ds, s, solve_conservative(s, vec({-2, 0.5}), 0.1));
    const std::string path = "ds_roundtrip.jsonl";
    save_dataset(ds, path);
    std::vector<std::string> warnings;
    const Dataset back = load_dataset(path, s.hash(), &warnings);
    CHECK(back == ds);
    CHECK(warnings.empty());
    load_dataset(path, make_pendulum().hash(), &warnings);
    CHECK(warnings.size() == 1);

    const Dataset empty(0.0, Norm::inf(), s.hash(), s.T());
    save_dataset(empty, path);
    CHECK(load_dataset(path) == empty);
    std::remove(path.c_str());
  }

  TEST_CASE("large synthetic round trip is bit exact") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-3, 3);
    Dataset ds(0.1, Norm::inf(), "synthetic", 10);
    for (int i = 0; i < 100000; ++i) {
      Transition t;
      t.x = vec({U(rng), U(rng)});
      t.u = vec({U(rng)});
      t.j = std::abs(U(rng)) * 1e3 / 7.0;
      t.traj_id = i / 10;
      t.step = i % 10;
      if (t.step < 9) t.succ = static_cast<std::size_t>(i + 1);
      ds.append(t);
    }
    const std::string path = "ds_large.jsonl";
    save_dataset(ds, path);
    const Dataset back = load_dataset(path);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK_MESSAGE(back[i].j == ds[i].j, i);
      if (back[i].j != ds[i].j || back[i].x != ds[i].x) break;
    }
    CHECK(back == ds);
    std::remove(path.c_str());
  }

  TEST_CASE("format errors") {
    const std::string path = "ds_bad.jsonl";
    {
      std::FILE* f = std::fopen(path.c_str(), "w");
      std::fputs("{\"format\":\"npmpc-ds\",\"version\":99}\n", f);
      std::fclose(f);
    }
    try {
      load_dataset(path);
      FAIL("expected an exception");
    } catch (const NpmpcError& e) {
      CHECK(e.code() == "version_mismatch");
    }
    std::remove(path.c_str());
  }
}
