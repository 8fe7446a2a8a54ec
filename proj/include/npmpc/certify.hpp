#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmpc/dataset.hpp"
#include "npmpc/geometry.hpp"
#include "npmpc/systems.hpp"

namespace npmpc {

/// Serialized as {kind, holds, witness?, params, exact}.
struct CertificateReport {
  std::string kind;
  bool holds = false;
  std::optional<State> witness;
  nlohmann::json params = nlohmann::json::object();
  bool exact = true;
  nlohmann::json to_json() const;
};

/// Whether (x,u) is one-step feasible for the eroded problem: x in X, u in U,
/// f(x,u) in X_{-eps}.
bool one_step_feasible(const System& sys, const State& x, const Control& u, double eps);

/// dist(f(x,u), boundary of X) / L_f. Throws "not_one_step_feasible".
double feas_radius_eq6(const System& sys, const State& x, const Control& u, double eps);

/// Radius of the largest origin-centered l-infinity ball inside a box:
/// min_i min(|lo_i|, |hi_i|). Zero when the box misses the origin.
double box_radius_R(const Box& X);
/// max{0, (R - L_u ||u||) / L_f - ||x||}
double feas_radius_xu(const System& sys, const State& x, const Control& u);
/// (R - ||x'||) / L_f
double feas_radius_xprime(const System& sys, const State& xprime);

/// beta (j + eta) / ((2 + beta) lambda)
double coverage_radius(double beta, double eta, double lambda, double j);

/// Original-problem gap implied by conservative gap beta_prime:
/// (beta' eta + L eps) / (eta - L eps). Throws "eta_too_small" if eta <= L eps.
double translate_gap(double beta_prime, double eta, double L, double eps);
/// Largest conservative gap achieving original gap beta:
/// (beta (eta - L eps) - L eps) / eta.
double inverse_translate_gap(double beta, double eta, double L, double eps);

/// 2 lambda d / (j + eta - lambda d); infeasible marker when the
/// denominator is not positive.
Cost rel_err_bound(double lambda, double dist, double j, double eta);

struct SampleComplexity {
  double r = 0.0;
  double r_gap = 0.0;       // the beta/eta branch
  double r_feas = 0.0;      // eps / (2 L_f); 0 when eps == 0 (branch dropped)
  std::uint64_t n_cover = 0;
  double n_bound = 0.0;     // n_cover ln(n_cover) ln(1/delta), O-constant 1, rounded up
  std::uint64_t n_cover_2r = 0;
  double n_bound_2r = 0.0;
  nlohmann::json to_json() const;
};

/// Radius and sample bound for uniform collection. With eps == 0 only the
/// gap branch applies. Throws "beta_eta_eps_incompatible" unless
/// eta > L eps and beta (eta - L eps) > L eps.
SampleComplexity sample_complexity(const System& sys, double beta, double eta, double delta, double eps,
                                   double lambda);

/// L_c / (1 - gamma max{L_f, L_u}); throws "precondition" unless the
/// denominator is positive.
double lipschitz_LJ_bound(double L_c, double gamma, double L_f, double L_u);

struct PropagationResult {
  bool holds = true;
  int violating_t = -1;
  double worst_ratio = 0.0;  // max_t ||x_t - x_t'|| / bound_t over t with bound > 0
};

/// Checks ||x_t - x_t'|| <= L_f^t ||x0 - x0'|| + L_u sum_l L_f^{t-1-l} ||u_l - u_l'||
/// (l-infinity) along both simulated trajectories.
PropagationResult propagation_bound_check(const System& sys, const State& x0, const State& x0p,
                                          const std::vector<Control>& us, const std::vector<Control>& usp);

/// Recursive-feasibility cover conditions: (1) the stored states form an
/// eps/L_f cover of X; (2) the balls of per-point radii dist(f(x_i,u_i),dX)/L_f
/// cover X. Entries that are not one-step feasible are excluded and counted.
CertificateReport check_recursive_feasibility(const Dataset& ds, const System& sys, const CoverOptions& opts = {});

/// Every x in X has some i with ||x - x_i|| <= beta (j_i + eta) / ((2 + beta) lambda).
CertificateReport check_theorem2_coverage(const Dataset& ds, double lambda, double beta, double eta, const Box& X,
                                          const CoverOptions& opts = {});

/// Empirical Lipschitz constant of J(., eps): largest slope
/// |J(x) - J(y)| / ||x - y|| over pairs of feasible sample points.
struct LipschitzEstimate {
  double value = 0.0;
  int feasible = 0;
  int samples = 0;
};
LipschitzEstimate estimate_lipschitz_J(const System& sys, double eps, int samples, std::uint64_t seed, int jobs = 1);
/// Largest (J(x, eps) - J(x, 0)) / eps over sample points feasible at eps.
LipschitzEstimate estimate_erosion_sensitivity(const System& sys, double eps, int samples, std::uint64_t seed,
                                               int jobs = 1);

}  // namespace npmpc
