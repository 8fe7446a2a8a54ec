#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "npmpc/cost.hpp"
#include "npmpc/geometry.hpp"

namespace npmpc {

/// Declared Lipschitz constants (all w.r.t. the l-infinity state norm).
struct LipschitzData {
  double L_f = 1.0;  // dynamics in x
  double L_u = 1.0;  // dynamics in u
  std::optional<double> L_c;  // stage cost
  double L_J = 1.0;  // cost-to-go in x
  double L = 1.0;    // cost-to-go sensitivity to the erosion level
};

struct LinearModel {
  Eigen::MatrixXd A, B;
};

/// Structure of the stage cost, used by the solvers to pick a method.
/// Generic costs are only reachable through the stage_cost callback.
enum class CostKind { Generic, Quadratic, L1 };

struct QuadraticCost {
  Eigen::MatrixXd Q, R;  // c(x,u) = x'Qx + u'Ru
};

struct L1Cost {
  double offset = 0.0;  // c(x,u) = offset + weight * ||u||_1
  double weight = 1.0;
};

using DynamicsFn = std::function<State(const State&, const Control&)>;
using StageCostFn = std::function<double(const State&, const Control&)>;
using TerminalCostFn = std::function<Cost(const State&)>;

/// A discrete-time optimal control problem: dynamics, costs, constraint
/// boxes, discount and horizon. Immutable once built; copies are cheap
/// relative to any solve.
class System {
 public:
  struct Spec {
    std::string name;
    int n = 0, m = 0;
    DynamicsFn dynamics;
    StageCostFn stage_cost;
    TerminalCostFn terminal_cost;  // empty means F == 0
    Box X, U;
    double gamma = 1.0;
    int T = 1;
    LipschitzData lipschitz;
    std::optional<LinearModel> linear;
    CostKind cost_kind = CostKind::Generic;
    std::optional<QuadraticCost> quadratic;
    std::optional<L1Cost> l1;
    std::optional<double> terminal_tol;  // terminal constraint ||x_T||inf <= tol
    std::string builtin;                 // "", "pendulum", "min_time", "clqr"
  };

  explicit System(Spec spec);

  const std::string& name() const { return s_.name; }
  int n() const { return s_.n; }
  int m() const { return s_.m; }
  const Box& X() const { return s_.X; }
  const Box& U() const { return s_.U; }
  double gamma() const { return s_.gamma; }
  int T() const { return s_.T; }
  const LipschitzData& lipschitz() const { return s_.lipschitz; }
  const std::optional<LinearModel>& linear() const { return s_.linear; }
  CostKind cost_kind() const { return s_.cost_kind; }
  const std::optional<QuadraticCost>& quadratic() const { return s_.quadratic; }
  const std::optional<L1Cost>& l1() const { return s_.l1; }
  const std::optional<double>& terminal_tol() const { return s_.terminal_tol; }
  const std::string& builtin() const { return s_.builtin; }
  const Spec& spec() const { return s_; }

  State dynamics(const State& x, const Control& u) const { return s_.dynamics(x, u); }
  double stage_cost(const State& x, const Control& u) const { return s_.stage_cost(x, u); }
  Cost terminal_cost(const State& x) const {
    return s_.terminal_cost ? s_.terminal_cost(x) : Cost(0.0);
  }

  System with_gamma(double gamma) const;
  System with_horizon(int T) const;
  System with_lipschitz(const LipschitzData& l) const;

  /// Canonical JSON description (the loadable config schema).
  nlohmann::json to_json() const;
  /// FNV-1a digest of to_json(), hex encoded.
  std::string hash() const;

 private:
  Spec s_;
};

/// x_{t+1} = f(x, u). Throws "dimension_mismatch".
State step(const System& sys, const State& x, const Control& u);

/// Discounted cost sum_t gamma^t c(x_t,u_t) + gamma^H F(x_H) of an arbitrary
/// length-H control sequence. Infeasible when x0 is outside X, a control is
/// outside U, a state x_1..x_H leaves erode(X, eps), or F(x_H) is infeasible.
Cost trajectory_cost(const System& sys, const State& x0, const std::vector<Control>& controls,
                     double eps = 0.0);

/// trajectory_cost with the precondition |controls| == T.
Cost rollout_cost(const System& sys, const State& x0, const std::vector<Control>& controls,
                  double eps = 0.0);

/// States x_0..x_H induced by the controls.
std::vector<State> simulate(const System& sys, const State& x0, const std::vector<Control>& controls);

/// |J(x) - c(x,pi(x)) - gamma J(f(x,pi(x)))|; infeasible if either J value is.
Cost bellman_residual(const System& sys, const std::function<Cost(const State&)>& J_fn,
                      const std::function<Control(const State&)>& pi_fn, const State& x);

System make_pendulum();
System make_min_time();
System make_clqr();
System make_builtin(const std::string& name);

/// Loads {name, n, m, A?, B?, Q?, R?, X_lo, X_hi, U_lo, U_hi, gamma, T,
/// lipschitz:{L_f,L_u,L_J,L}, builtin?}. A builtin supplies dynamics and
/// costs; the remaining fields, when present, override its defaults.
System system_from_json(const nlohmann::json& j);
System load_system(const std::string& path);
/// Builtin name or a path to a JSON config.
System resolve_system(const std::string& name_or_path);

/// Induced l-infinity norm (max absolute row sum).
double induced_inf_norm(const Eigen::MatrixXd& M);

}  // namespace npmpc
