#include "npmpc/systems.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

namespace npmpc {

namespace {

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw NpmpcError("config_error", "matrix must be a nonempty array");
  const bool nested = j[0].is_array();
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = nested ? static_cast<Eigen::Index>(j[0].size()) : 1;
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (nested) {
      if (j[r].size() != static_cast<std::size_t>(cols)) throw NpmpcError("config_error", "ragged matrix");
      for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = j[r][c].get<double>();
    } else {
      M(r, 0) = j[r].get<double>();
    }
  }
  return M;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

void attach_linear_dynamics(System::Spec& s, const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  s.linear = LinearModel{A, B};
  s.dynamics = [A, B](const State& x, const Control& u) -> State { return A * x + B * u; };
}

void attach_quadratic_cost(System::Spec& s, const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  s.cost_kind = CostKind::Quadratic;
  s.quadratic = QuadraticCost{Q, R};
  s.stage_cost = [Q, R](const State& x, const Control& u) {
    return x.dot(Q * x) + u.dot(R * u);
  };
}

}  // namespace

double induced_inf_norm(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  return M.cwiseAbs().rowwise().sum().maxCoeff();
}

System::System(Spec spec) : s_(std::move(spec)) {
  if (s_.n <= 0 || s_.m <= 0) throw NpmpcError("config_error", "state and control dimensions must be positive");
  if (s_.X.dim() != s_.n || s_.U.dim() != s_.m)
    throw NpmpcError("dimension_mismatch", "constraint boxes do not match (n, m)");
  if (s_.X.empty() || s_.U.empty()) throw NpmpcError("config_error", "X and U must be nonempty");
  if (!(s_.gamma > 0.0 && s_.gamma <= 1.0)) throw NpmpcError("config_error", "gamma must lie in (0, 1]");
  if (s_.T < 1) throw NpmpcError("config_error", "horizon T must be >= 1");
  if (!s_.dynamics || !s_.stage_cost) throw NpmpcError("config_error", "dynamics and stage cost are required");
  const auto& L = s_.lipschitz;
  if (!(L.L_f > 0 && L.L_u > 0 && L.L_J > 0 && L.L > 0))
    throw NpmpcError("config_error", "Lipschitz constants L_f, L_u, L_J, L must be positive");
  if (!s_.X.contains(Eigen::VectorXd::Zero(s_.n))) throw NpmpcError("config_error", "origin must lie in X");
}

System System::with_gamma(double gamma) const {
  Spec s = s_;
  s.gamma = gamma;
  return System(std::move(s));
}

System System::with_horizon(int T) const {
  Spec s = s_;
  s.T = T;
  return System(std::move(s));
}

System System::with_lipschitz(const LipschitzData& l) const {
  Spec s = s_;
  s.lipschitz = l;
  return System(std::move(s));
}

nlohmann::json System::to_json() const {
  nlohmann::json j;
  j["name"] = s_.name;
  j["n"] = s_.n;
  j["m"] = s_.m;
  if (!s_.builtin.empty()) j["builtin"] = s_.builtin;
  if (s_.linear) {
    j["A"] = matrix_to_json(s_.linear->A);
    j["B"] = matrix_to_json(s_.linear->B);
  }
  if (s_.quadratic && s_.builtin.empty()) {
    j["Q"] = matrix_to_json(s_.quadratic->Q);
    j["R"] = matrix_to_json(s_.quadratic->R);
  }
  j["X_lo"] = vector_to_json(s_.X.lo());
  j["X_hi"] = vector_to_json(s_.X.hi());
  j["U_lo"] = vector_to_json(s_.U.lo());
  j["U_hi"] = vector_to_json(s_.U.hi());
  j["gamma"] = s_.gamma;
  j["T"] = s_.T;
  nlohmann::json l;
  l["L_f"] = s_.lipschitz.L_f;
  l["L_u"] = s_.lipschitz.L_u;
  l["L_J"] = s_.lipschitz.L_J;
  l["L"] = s_.lipschitz.L;
  if (s_.lipschitz.L_c) l["L_c"] = *s_.lipschitz.L_c;
  j["lipschitz"] = l;
  return j;
}

std::string System::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

State step(const System& sys, const State& x, const Control& u) {
  if (x.size() != sys.n() || u.size() != sys.m())
    throw NpmpcError("dimension_mismatch",
                     fmt::format("step expects (n={}, m={}), got ({}, {})", sys.n(), sys.m(), x.size(), u.size()));
  return sys.dynamics(x, u);
}

std::vector<State> simulate(const System& sys, const State& x0, const std::vector<Control>& controls) {
  std::vector<State> xs;
  xs.reserve(controls.size() + 1);
  xs.push_back(x0);
  for (const auto& u : controls) xs.push_back(step(sys, xs.back(), u));
  return xs;
}

Cost trajectory_cost(const System& sys, const State& x0, const std::vector<Control>& controls, double eps) {
  if (x0.size() != sys.n()) throw NpmpcError("dimension_mismatch", "x0 has the wrong dimension");
  if (!sys.X().contains(x0)) return Cost::infeasible();
  const Box active = erode(sys.X(), eps);
  double total = 0.0;
  double disc = 1.0;
  State x = x0;
  for (const auto& u : controls) {
    if (!sys.U().contains(u)) return Cost::infeasible();
    total += disc * sys.stage_cost(x, u);
    x = step(sys, x, u);
    if (!active.contains(x)) return Cost::infeasible();
    disc *= sys.gamma();
  }
  Cost F = sys.terminal_cost(x);
  if (!F.finite()) return Cost::infeasible();
  return Cost(total + disc * F.value());
}

Cost rollout_cost(const System& sys, const State& x0, const std::vector<Control>& controls, double eps) {
  if (static_cast<int>(controls.size()) != sys.T())
    throw NpmpcError("horizon_mismatch", fmt::format("expected {} controls, got {}", sys.T(), controls.size()));
  return trajectory_cost(sys, x0, controls, eps);
}

Cost bellman_residual(const System& sys, const std::function<Cost(const State&)>& J_fn,
                      const std::function<Control(const State&)>& pi_fn, const State& x) {
  const Control u = pi_fn(x);
  const Cost Jx = J_fn(x);
  const Cost Jn = J_fn(step(sys, x, u));
  if (!Jx.finite() || !Jn.finite()) return Cost::infeasible();
  return Cost(std::abs(Jx.value() - sys.stage_cost(x, u) - sys.gamma() * Jn.value()));
}

System make_pendulum() {
  constexpr double mass = 1.0, length = 1.0, grav = 9.82, dt = 0.05;
  System::Spec s;
  s.name = "pendulum";
  s.builtin = "pendulum";
  s.n = 2;
  s.m = 1;
  // Forward Euler on x1' = x2, x2' = -(g/l) sin x1 + u/(m l^2).
  s.dynamics = [=](const State& x, const Control& u) -> State {
    State y(2);
    y[0] = x[0] + dt * x[1];
    y[1] = x[1] + dt * (-(grav / length) * std::sin(x[0]) + u[0] / (mass * length * length));
    return y;
  };
  Eigen::MatrixXd Q(2, 2);
  Q << 1.0, 0.0, 0.0, 0.1;
  Eigen::MatrixXd R(1, 1);
  R << 0.01;
  attach_quadratic_cost(s, Q, R);
  s.X = Box::cube(2, 2.0);
  s.U = Box::cube(1, 5.0);
  s.gamma = 1.0;
  s.T = 100;
  // Jacobian of the Euler map is [[1, dt], [-dt (g/l) cos x1, 1]].
  s.lipschitz.L_f = 1.0 + dt * grav / length;
  s.lipschitz.L_u = dt / (mass * length * length);
  s.lipschitz.L_c = 2.0 * 2.0 + 0.2 * 2.0 + 0.02 * 5.0;
  // Empirical estimates (see estimate_lipschitz_J / estimate_erosion_sensitivity).
  s.lipschitz.L_J = 120.0;
  s.lipschitz.L = 6.0;
  return System(std::move(s));
}

System make_min_time() {
  constexpr double dt = 0.1;
  System::Spec s;
  s.name = "min_time";
  s.builtin = "min_time";
  s.n = 2;
  s.m = 1;
  Eigen::MatrixXd Ac(2, 2), Bc(2, 1);
  Ac << 0.2, 1.0, 0.0, 0.0;
  Bc << 0.0, 1.0;
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2) + dt * Ac;
  const Eigen::MatrixXd B = dt * Bc;
  attach_linear_dynamics(s, A, B);
  s.cost_kind = CostKind::L1;
  s.l1 = L1Cost{1.0, 10.0};
  s.stage_cost = [](const State&, const Control& u) { return 1.0 + 10.0 * u.cwiseAbs().sum(); };
  constexpr double tol_T = 1e-3;
  s.terminal_tol = tol_T;
  s.terminal_cost = [](const State& x) {
    return x.cwiseAbs().maxCoeff() <= tol_T ? Cost(0.0) : Cost::infeasible();
  };
  s.X = Box::cube(2, 2.0);
  s.U = Box::cube(1, 1.0);
  s.gamma = 1.0;
  s.T = 200;
  s.lipschitz.L_f = induced_inf_norm(A);
  s.lipschitz.L_u = induced_inf_norm(B);
  s.lipschitz.L_c = 10.0;
  s.lipschitz.L_J = 2600.0;
  s.lipschitz.L = 90.0;
  return System(std::move(s));
}

System make_clqr() {
  System::Spec s;
  s.name = "clqr";
  s.builtin = "clqr";
  s.n = 2;
  s.m = 1;
  Eigen::MatrixXd A(2, 2), B(2, 1);
  A << 1.0, 0.1, 0.0, 1.0;
  B << 0.15, 1.0;
  attach_linear_dynamics(s, A, B);
  attach_quadratic_cost(s, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1));
  s.X = Box::cube(2, 3.0);
  s.U = Box::cube(1, 2.0);
  s.gamma = 1.0;
  s.T = 10;
  s.lipschitz.L_f = induced_inf_norm(A);
  s.lipschitz.L_u = induced_inf_norm(B);
  s.lipschitz.L_c = 2.0 * 3.0 * 2 + 2.0 * 2.0;
  s.lipschitz.L_J = 70.0;
  s.lipschitz.L = 10.0;
  return System(std::move(s));
}

System make_builtin(const std::string& name) {
  if (name == "pendulum") return make_pendulum();
  if (name == "min_time") return make_min_time();
  if (name == "clqr") return make_clqr();
  throw NpmpcError("unknown_system", "no builtin system named '" + name + "'");
}

System system_from_json(const nlohmann::json& j) {
  System::Spec s;
  if (j.contains("builtin")) {
    s = make_builtin(j.at("builtin").get<std::string>()).spec();
  } else {
    const int n = j.at("n").get<int>();
    const int m = j.at("m").get<int>();
    s.n = n;
    s.m = m;
    if (!j.contains("A") || !j.contains("B"))
      throw NpmpcError("config_error", "non-builtin systems need A and B");
    Eigen::MatrixXd A = matrix_from_json(j.at("A"));
    Eigen::MatrixXd B = matrix_from_json(j.at("B"));
    if (A.rows() != n || A.cols() != n || B.rows() != n || B.cols() != m)
      throw NpmpcError("dimension_mismatch", "A must be n x n and B n x m");
    attach_linear_dynamics(s, A, B);
    Eigen::MatrixXd Q = j.contains("Q") ? matrix_from_json(j.at("Q")) : Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd R = j.contains("R") ? matrix_from_json(j.at("R")) : Eigen::MatrixXd::Identity(m, m);
    attach_quadratic_cost(s, Q, R);
    s.lipschitz.L_f = induced_inf_norm(A);
    s.lipschitz.L_u = induced_inf_norm(B);
  }
  if (j.contains("name")) s.name = j.at("name").get<std::string>();
  if (j.contains("X_lo") || j.contains("X_hi"))
    s.X = Box(vector_from_json(j.at("X_lo")), vector_from_json(j.at("X_hi")));
  if (j.contains("U_lo") || j.contains("U_hi"))
    s.U = Box(vector_from_json(j.at("U_lo")), vector_from_json(j.at("U_hi")));
  if (j.contains("gamma")) s.gamma = j.at("gamma").get<double>();
  if (j.contains("T")) s.T = j.at("T").get<int>();
  if (j.contains("lipschitz")) {
    const auto& l = j.at("lipschitz");
    if (l.contains("L_f")) s.lipschitz.L_f = l.at("L_f").get<double>();
    if (l.contains("L_u")) s.lipschitz.L_u = l.at("L_u").get<double>();
    if (l.contains("L_J")) s.lipschitz.L_J = l.at("L_J").get<double>();
    if (l.contains("L")) s.lipschitz.L = l.at("L").get<double>();
    if (l.contains("L_c")) s.lipschitz.L_c = l.at("L_c").get<double>();
  }
  if (j.contains("n") && j.at("n").get<int>() != s.n)
    throw NpmpcError("dimension_mismatch", "config n disagrees with the system");
  if (j.contains("m") && j.at("m").get<int>() != s.m)
    throw NpmpcError("dimension_mismatch", "config m disagrees with the system");
  return System(std::move(s));
}

System load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NpmpcError("io_error", "cannot open system config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw NpmpcError("config_error", fmt::format("{}: {}", path, e.what()));
  }
  return system_from_json(j);
}

System resolve_system(const std::string& name_or_path) {
  if (name_or_path == "pendulum" || name_or_path == "min_time" || name_or_path == "clqr")
    return make_builtin(name_or_path);
  return load_system(name_or_path);
}

}  // namespace npmpc
