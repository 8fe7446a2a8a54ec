#include "npmpc/certify.hpp"

#include <fmt/format.h>

#include <cmath>

#include "npmpc/parallel.hpp"
#include "npmpc/rng.hpp"
#include "npmpc/solver.hpp"

namespace npmpc {

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

}  // namespace

nlohmann::json CertificateReport::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["holds"] = holds;
  if (witness) j["witness"] = vec_json(*witness);
  j["params"] = params;
  j["exact"] = exact;
  return j;
}

bool one_step_feasible(const System& sys, const State& x, const Control& u, double eps) {
  if (!sys.X().contains(x) || !sys.U().contains(u)) return false;
  return erode(sys.X(), eps).contains(sys.dynamics(x, u));
}

double feas_radius_eq6(const System& sys, const State& x, const Control& u, double eps) {
  if (!one_step_feasible(sys, x, u, eps))
    throw NpmpcError("not_one_step_feasible", "f(x,u) is not inside the eroded state set");
  return dist_to_boundary(sys.dynamics(x, u), sys.X()).dist / sys.lipschitz().L_f;
}

double box_radius_R(const Box& X) {
  double R = std::numeric_limits<double>::infinity();
  for (int i = 0; i < X.dim(); ++i) {
    if (X.lo()[i] > 0.0 || X.hi()[i] < 0.0) return 0.0;
    R = std::min({R, std::abs(X.lo()[i]), std::abs(X.hi()[i])});
  }
  return R;
}

double feas_radius_xu(const System& sys, const State& x, const Control& u) {
  const double R = box_radius_R(sys.X());
  const auto& L = sys.lipschitz();
  return std::max(0.0, (R - L.L_u * u.lpNorm<Eigen::Infinity>()) / L.L_f - x.lpNorm<Eigen::Infinity>());
}

double feas_radius_xprime(const System& sys, const State& xprime) {
  return (box_radius_R(sys.X()) - xprime.lpNorm<Eigen::Infinity>()) / sys.lipschitz().L_f;
}

double coverage_radius(double beta, double eta, double lambda, double j) {
  return beta * (j + eta) / ((2.0 + beta) * lambda);
}

double translate_gap(double beta_prime, double eta, double L, double eps) {
  if (!(eta > L * eps)) throw NpmpcError("eta_too_small", fmt::format("eta={} must exceed L*eps={}", eta, L * eps));
  return (beta_prime * eta + L * eps) / (eta - L * eps);
}

double inverse_translate_gap(double beta, double eta, double L, double eps) {
  if (!(eta > L * eps)) throw NpmpcError("eta_too_small", fmt::format("eta={} must exceed L*eps={}", eta, L * eps));
  return (beta * (eta - L * eps) - L * eps) / eta;
}

Cost rel_err_bound(double lambda, double dist, double j, double eta) {
  const double den = j + eta - lambda * dist;
  if (!(den > 0.0)) return Cost::infeasible();
  return Cost(2.0 * lambda * dist / den);
}

nlohmann::json SampleComplexity::to_json() const {
  return {{"r", r},
          {"r_gap", r_gap},
          {"r_feas", r_feas},
          {"n_cover", n_cover},
          {"n_bound", n_bound},
          {"n_cover_2r", n_cover_2r},
          {"n_bound_2r", n_bound_2r},
          {"constant", "O-constant fixed to 1"}};
}

SampleComplexity sample_complexity(const System& sys, double beta, double eta, double delta, double eps,
                                   double lambda) {
  const double L = sys.lipschitz().L;
  const double Le = L * eps;
  if (!(eta > Le) || !(beta * (eta - Le) > Le) || !(delta > 0.0 && delta < 1.0) || !(lambda > 0.0))
    throw NpmpcError("beta_eta_eps_incompatible",
                     fmt::format("need eta > L eps and beta (eta - L eps) > L eps (L eps = {})", Le));
  SampleComplexity s;
  s.r_gap = (beta * (eta - Le) - Le) * eta / (2.0 * lambda * (2.0 * eta + beta * (eta - Le) - Le));
  s.r_feas = eps > 0.0 ? eps / (2.0 * sys.lipschitz().L_f) : 0.0;
  s.r = eps > 0.0 ? std::min(s.r_gap, s.r_feas) : s.r_gap;
  auto bound = [&](std::uint64_t nc) {
    const double v = static_cast<double>(nc) * std::log(static_cast<double>(nc)) * std::log(1.0 / delta);
    return std::max(1.0, std::ceil(v));
  };
  s.n_cover = covering_number_box(sys.X(), s.r);
  s.n_bound = bound(s.n_cover);
  s.n_cover_2r = covering_number_box(sys.X(), 2.0 * s.r);
  s.n_bound_2r = bound(s.n_cover_2r);
  return s;
}

double lipschitz_LJ_bound(double L_c, double gamma, double L_f, double L_u) {
  const double den = 1.0 - gamma * std::max(L_f, L_u);
  if (!(den > 0.0)) throw NpmpcError("precondition", "gamma*max(L_f, L_u) must be < 1");
  return L_c / den;
}

PropagationResult propagation_bound_check(const System& sys, const State& x0, const State& x0p,
                                          const std::vector<Control>& us, const std::vector<Control>& usp) {
  if (us.size() != usp.size()) throw NpmpcError("dimension_mismatch", "control sequences differ in length");
  const double Lf = sys.lipschitz().L_f, Lu = sys.lipschitz().L_u;
  PropagationResult res;
  State x = x0, y = x0p;
  double bound = (x0 - x0p).lpNorm<Eigen::Infinity>();
  for (std::size_t t = 0; t <= us.size(); ++t) {
    const double d = (x - y).lpNorm<Eigen::Infinity>();
    // Tolerance covers the rounding of the two simulations.
    if (d > bound * (1.0 + 1e-12) + 1e-12) {
      if (res.holds) res.violating_t = static_cast<int>(t);
      res.holds = false;
    }
    if (bound > 0.0) res.worst_ratio = std::max(res.worst_ratio, d / bound);
    if (t == us.size()) break;
    bound = Lf * bound + Lu * (us[t] - usp[t]).lpNorm<Eigen::Infinity>();
    x = sys.dynamics(x, us[t]);
    y = sys.dynamics(y, usp[t]);
  }
  return res;
}

CertificateReport check_recursive_feasibility(const Dataset& ds, const System& sys, const CoverOptions& opts) {
  CertificateReport rep;
  rep.kind = "recursive_feasibility";
  const double Lf = sys.lipschitz().L_f;
  const double eps = ds.eps();
  std::vector<Eigen::VectorXd> centers;
  std::vector<double> r_eq6;
  std::size_t excluded = 0;
  for (const auto& t : ds.transitions()) {
    if (!one_step_feasible(sys, t.x, t.u, eps)) {
      ++excluded;
      continue;
    }
    centers.push_back(t.x);
    r_eq6.push_back(dist_to_boundary(sys.dynamics(t.x, t.u), sys.X()).dist / Lf);
  }
  const double r_uniform = eps / Lf;
  CoverResult c1, c2;
  if (!centers.empty() && eps > 0.0) {
    c1 = is_cover(centers, std::vector<double>(centers.size(), r_uniform), sys.X(), Norm::inf(), opts);
  } else {
    c1.covered = false;
    c1.witness = sys.X().center();
  }
  if (c1.covered) {
    c2 = c1;  // condition 2 radii dominate the uniform ones
  } else if (!centers.empty()) {
    c2 = is_cover(centers, r_eq6, sys.X(), Norm::inf(), opts);
  } else {
    c2.covered = false;
    c2.witness = sys.X().center();
  }
  rep.holds = c1.covered || c2.covered;
  rep.exact = c1.exact && c2.exact;
  if (!rep.holds) rep.witness = c2.witness ? c2.witness : c1.witness;
  rep.params = {{"eps", eps},
                {"L_f", Lf},
                {"uniform_radius", r_uniform},
                {"condition1", c1.covered},
                {"condition2", c2.covered},
                {"points", ds.size()},
                {"not_one_step_feasible", excluded},
                {"closed", ds.closed()},
                {"terminal_transitions_exempt_from_closure", true},
                {"slack", opts.slack}};
  return rep;
}

CertificateReport check_theorem2_coverage(const Dataset& ds, double lambda, double beta, double eta, const Box& X,
                                          const CoverOptions& opts) {
  if (!(beta > 0.0) || !(eta > 0.0) || !(lambda > 0.0))
    throw NpmpcError("precondition", "beta, eta and lambda must be positive");
  CertificateReport rep;
  rep.kind = "theorem2_coverage";
  std::vector<Eigen::VectorXd> centers;
  std::vector<double> radii;
  for (const auto& t : ds.transitions()) {
    centers.push_back(t.x);
    radii.push_back(coverage_radius(beta, eta, lambda, t.j));
  }
  CoverResult c;
  if (centers.empty()) {
    c.covered = false;
    c.witness = X.center();
  } else {
    c = is_cover(centers, radii, X, ds.norm(), opts);
  }
  rep.holds = c.covered;
  rep.exact = c.exact;
  rep.witness = c.witness;
  rep.params = {{"lambda", lambda}, {"beta", beta}, {"eta", eta}, {"points", ds.size()}, {"slack", opts.slack}};
  if (!c.exact) rep.params["probe_resolution"] = c.probe_resolution;
  return rep;
}

LipschitzEstimate estimate_lipschitz_J(const System& sys, double eps, int samples, std::uint64_t seed, int jobs) {
  // Random points plus a short axis-aligned offset from each, so both global
  // and local slopes are seen.
  const double h = 1e-3 * (sys.X().hi() - sys.X().lo()).maxCoeff();
  std::vector<State> xs(2 * static_cast<std::size_t>(samples));
  std::vector<Cost> js(xs.size());
  parallel_for(xs.size(), jobs, [&](std::size_t k) {
    const std::size_t i = k / 2;
    State x = counter_sample(sys.X(), seed, i);
    if (k % 2 == 1) {
      const int axis = static_cast<int>(i % static_cast<std::size_t>(sys.n()));
      x[axis] += (x[axis] + h <= sys.X().hi()[axis]) ? h : -h;
    }
    xs[k] = x;
    js[k] = solve_conservative(sys, x, eps).cost;
  });
  LipschitzEstimate est;
  est.samples = samples;
  for (std::size_t a = 0; a < xs.size(); ++a) {
    if (!js[a].finite()) continue;
    if (a % 2 == 0) ++est.feasible;
    for (std::size_t b = a + 1; b < xs.size(); ++b) {
      if (!js[b].finite()) continue;
      const double d = (xs[a] - xs[b]).lpNorm<Eigen::Infinity>();
      if (d > 0) est.value = std::max(est.value, std::abs(js[a].value() - js[b].value()) / d);
    }
  }
  return est;
}

LipschitzEstimate estimate_erosion_sensitivity(const System& sys, double eps, int samples, std::uint64_t seed,
                                               int jobs) {
  if (!(eps > 0.0)) throw NpmpcError("precondition", "eps must be positive");
  std::vector<double> slope(samples, -1.0);
  parallel_for(samples, jobs, [&](std::size_t i) {
    const State x = counter_sample(sys.X(), seed, i);
    const Cost je = solve_conservative(sys, x, eps).cost;
    if (!je.finite()) return;
    const Cost j0 = solve_conservative(sys, x, 0.0).cost;
    if (!j0.finite()) return;
    slope[i] = std::max(0.0, (je.value() - j0.value()) / eps);
  });
  LipschitzEstimate est;
  est.samples = samples;
  for (double s : slope)
    if (s >= 0.0) {
      ++est.feasible;
      est.value = std::max(est.value, s);
    }
  return est;
}

}  // namespace npmpc
