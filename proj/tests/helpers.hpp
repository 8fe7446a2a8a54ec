#pragma once

#include <Eigen/Dense>
#include <initializer_list>

#include "npmpc/systems.hpp"

namespace npmpc::test {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline Box box(std::initializer_list<double> lo, std::initializer_list<double> hi) { return Box(vec(lo), vec(hi)); }

// x' = x (scalar), zero cost, X = [-1,1], U = [-1,1].
inline System zero_cost_system(double gamma = 1.0, int T = 3) {
  System::Spec s;
  s.name = "zero";
  s.n = 1;
  s.m = 1;
  s.dynamics = [](const State& x, const Control&) { return x; };
  s.stage_cost = [](const State&, const Control&) { return 0.0; };
  s.X = Box::cube(1, 1.0);
  s.U = Box::cube(1, 1.0);
  s.gamma = gamma;
  s.T = T;
  return System(s);
}

}  // namespace npmpc::test
