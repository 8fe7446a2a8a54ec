#include <doctest.h>

#include "helpers.hpp"
#include "npmpc/geometry.hpp"

using namespace npmpc;
using npmpc::test::box;
using npmpc::test::vec;

TEST_SUITE("geometry") {
  TEST_CASE("erode shrinks each face") {
    const Box E = erode(Box::cube(2, 3.0), 0.5);
    CHECK(E == Box::cube(2, 2.5));
    CHECK(erode(Box::cube(2, 3.0), 0.0) == Box::cube(2, 3.0));
    CHECK(erode(box({-1}, {1}), 1.5).empty());
    CHECK(erode(Box::cube(2, 3.0), 0.5, Norm::two()) == Box::cube(2, 2.5));
  }

  TEST_CASE("erode of a nonsymmetric box") {
    const Box E = erode(box({-1, 0}, {4, 2}), 0.25);
    CHECK(E.lo() == vec({-0.75, 0.25}));
    CHECK(E.hi() == vec({3.75, 1.75}));
  }

  TEST_CASE("distance to the boundary") {
    const Box X = Box::cube(2, 3.0);
    CHECK(dist_to_boundary(vec({0, 0}), X).dist == 3.0);
    CHECK(dist_to_boundary(vec({2.5, 0}), X).dist == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(dist_to_boundary(vec({3, 0}), X).dist == 0.0);
    const auto out = dist_to_boundary(vec({4, 0}), X);
    CHECK(out.outside);
    CHECK(out.dist == 0.0);
  }

  TEST_CASE("uniform grid") {
    const auto g1 = uniform_grid(box({-1}, {1}), 3);
    REQUIRE(g1.size() == 3);
    CHECK(g1[0][0] == -1.0);
    CHECK(g1[1][0] == 0.0);
    CHECK(g1[2][0] == 1.0);
    CHECK(uniform_grid(Box::cube(2, 1.0), 3).size() == 9);
    CHECK(uniform_grid(Box::cube(2, 2.0), 11).size() == 121);
    CHECK(uniform_grid(Box::cube(2, 2.0), 1)[0] == vec({0, 0}));
  }

  TEST_CASE("covering number of a box") {
    CHECK(covering_number_box(Box::cube(2, 3.0), 0.5) == 36);
    CHECK(covering_number_box(Box::cube(2, 3.0), 3.0) == 1);
    CHECK(covering_number_box(Box::cube(2, 2.0), 0.1) == 400);
    CHECK(cover_centers(Box::cube(2, 3.0), 0.5).size() == 36);
  }

  TEST_CASE("cover test") {
    const auto centers = uniform_grid(Box::cube(2, 1.0), 3);
    CHECK(is_cover(centers, std::vector<double>(9, 0.5), Box::cube(2, 1.0)).covered);

    const auto single = is_cover({vec({0, 0})}, {0.9}, Box::cube(2, 1.0));
    CHECK_FALSE(single.covered);
    REQUIRE(single.witness);
    CHECK(single.witness->lpNorm<Eigen::Infinity>() > 0.9);

    // A gap strictly inside.
    CHECK_FALSE(is_cover({vec({-0.5}), vec({0.5})}, {0.49, 0.49}, box({-1}, {1})).covered);
    CHECK(is_cover({vec({-0.5}), vec({0.5})}, {0.49, 0.49}, box({-1}, {1}), Norm::inf(), {0.02}).covered);
  }

  TEST_CASE("cover test in l2 is probabilistic") {
    const auto r = is_cover({vec({0, 0})}, {1.5}, Box::cube(2, 1.0), Norm::two());
    CHECK(r.covered);
    CHECK_FALSE(r.exact);
    CHECK_FALSE(is_cover({vec({0, 0})}, {1.3}, Box::cube(2, 1.0), Norm::two()).covered);
  }

  TEST_CASE("norms") {
    const auto v = vec({3, -4});
    CHECK(Norm::inf()(v) == 4.0);
    CHECK(Norm::two()(v) == 5.0);
    CHECK(Norm::lp(1.0)(v) == doctest::Approx(7.0));
    CHECK(Norm::parse("inf") == Norm::inf());
    CHECK(Norm::parse("two") == Norm::two());
  }
}
