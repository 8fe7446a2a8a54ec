#include "npmpc/solver.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <deque>

#include <Eigen/Sparse>
#include <limits>

#include "npmpc/parallel.hpp"
#include "npmpc/rng.hpp"

namespace npmpc {

std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::MaxIter: return "max_iter";
    case SolveStatus::Infeasible: return "infeasible";
  }
  return "infeasible";
}

namespace {

// Interior margins tried in turn; the solution is re-simulated against the
// untightened sets, so a margin only trades a tiny amount of optimality.
constexpr double kMargins[] = {1e-9, 1e-7, 1e-5};

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bounds for x_1..x_H: eroded box shrunk by `margin`, terminal tolerance at H.
std::vector<Box> state_bounds(const System& sys, double eps, int H, double margin) {
  const Box E = erode(sys.X(), eps);
  std::vector<Box> out;
  out.reserve(H);
  for (int t = 1; t <= H; ++t) {
    Vec lo = E.lo().array() + margin;
    Vec hi = E.hi().array() - margin;
    if (t == H && sys.terminal_tol()) {
      const double tol = *sys.terminal_tol();
      const double m = std::min(margin, tol * 0.1);
      lo = lo.cwiseMax(Vec::Constant(sys.n(), -tol + m));
      hi = hi.cwiseMin(Vec::Constant(sys.n(), tol - m));
    }
    out.emplace_back(lo, hi);
  }
  return out;
}

SolveResult finalize(const System& sys, const State& x0, double eps, std::vector<Control> controls,
                     bool converged, int iters) {
  SolveResult r;
  for (auto& u : controls) u = sys.U().clamp(u);
  r.states = simulate(sys, x0, controls);
  r.cost = trajectory_cost(sys, x0, controls, eps);
  r.controls = std::move(controls);
  r.iterations = iters;
  r.status = r.cost.finite() ? (converged ? SolveStatus::Optimal : SolveStatus::MaxIter)
                             : SolveStatus::Infeasible;
  return r;
}

bool better(const SolveResult& a, const SolveResult& b) {
  if (a.cost.finite() != b.cost.finite()) return a.cost.finite();
  if (!a.cost.finite()) return false;
  return a.cost.value() < b.cost.value();
}

std::vector<Control> split_controls(const Vec& z, int H, int m) {
  std::vector<Control> us(H);
  for (int t = 0; t < H; ++t) us[t] = z.segment(t * m, m);
  return us;
}

// ---------------------------------------------------------------------------
// LTI path: the sparse (states kept as variables) problem
//   min 1/2 z'Pz + q'z + sum_i w_i |(Az)_i|   s.t.  l <= Az <= u
// with z = [u_0, x_1, u_1, x_2, ..., u_{H-1}, x_H], solved by ADMM with a
// sparse Cholesky factor and adaptive penalty, then polished on the active
// set when the cost is quadratic.

using SpMat = Eigen::SparseMatrix<double>;
using Trip = Eigen::Triplet<double>;

struct AdmmProblem {
  SpMat P;
  Vec q;
  SpMat A;
  Vec l, u, w;
};

struct AdmmResult {
  Vec z, y;
  bool converged = false;
  bool infeasible = false;
  int iters = 0;
};

AdmmResult admm(const AdmmProblem& pr, double tol, int max_iter) {
  const Eigen::Index N = pr.A.cols();
  const Eigen::Index M = pr.A.rows();
  const double sigma = 1e-6, alpha = 1.6;
  double rho = 0.1;
  // Equality and near-equality rows get a stiffer penalty.
  Vec scale = Vec::Ones(M);
  for (Eigen::Index i = 0; i < M; ++i)
    if (pr.u[i] - pr.l[i] < 1e-2) scale[i] = 1e3;
  Vec rv = rho * scale;
  const SpMat At = pr.A.transpose();

  Eigen::SimplicialLDLT<SpMat> ldlt;
  SpMat I(N, N);
  I.setIdentity();
  bool analyzed = false;
  auto factor = [&] {
    rv = rho * scale;
    SpMat K = pr.P + sigma * I + SpMat(At * rv.asDiagonal() * pr.A);
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
  };
  factor();

  Vec x = Vec::Zero(N);
  Vec v = (pr.A * x).cwiseMax(pr.l).cwiseMin(pr.u);
  Vec y = Vec::Zero(M);
  AdmmResult res;
  const double eps_pinf = 1e-7;
  const double w_scale = pr.w.lpNorm<Eigen::Infinity>();

  for (int it = 1; it <= max_iter; ++it) {
    const Vec rhs = sigma * x - pr.q + At * (rv.cwiseProduct(v) - y);
    const Vec xt = ldlt.solve(rhs);
    const Vec vt = pr.A * xt;
    x = alpha * xt + (1.0 - alpha) * x;
    const Vec vh = alpha * vt + (1.0 - alpha) * v;
    Vec a = vh + y.cwiseQuotient(rv);
    for (Eigen::Index i = 0; i < M; ++i) {
      if (pr.w[i] > 0.0) {
        const double thr = pr.w[i] / rv[i];
        a[i] = a[i] > thr ? a[i] - thr : (a[i] < -thr ? a[i] + thr : 0.0);
      }
      a[i] = std::clamp(a[i], pr.l[i], pr.u[i]);
    }
    const Vec dy = rv.cwiseProduct(vh - a);
    y += dy;
    v = a;
    res.iters = it;

    if (it % 10 != 0) continue;
    const Vec Ax = pr.A * x;
    const Vec Px = pr.P * x;
    const Vec ATy = At * y;
    const double rp = (Ax - v).lpNorm<Eigen::Infinity>();
    const double rd = (Px + pr.q + ATy).lpNorm<Eigen::Infinity>();
    const double sp = std::max(Ax.lpNorm<Eigen::Infinity>(), v.lpNorm<Eigen::Infinity>());
    const double sd = std::max({Px.lpNorm<Eigen::Infinity>(), ATy.lpNorm<Eigen::Infinity>(),
                                pr.q.lpNorm<Eigen::Infinity>(), w_scale});
    if (rp <= tol + tol * sp && rd <= tol + tol * sd) {
      res.converged = true;
      break;
    }
    if (it >= 200) {
      const double ndy = dy.lpNorm<Eigen::Infinity>();
      if (ndy > 0.0 && (At * dy).lpNorm<Eigen::Infinity>() <= eps_pinf * ndy) {
        double support = 0.0;
        for (Eigen::Index i = 0; i < M; ++i) support += dy[i] > 0 ? pr.u[i] * dy[i] : pr.l[i] * dy[i];
        if (support <= -eps_pinf * ndy) {
          res.infeasible = true;
          break;
        }
      }
    }
    if (it % 50 == 0) {
      const double ratio = std::sqrt((rp / std::max(sp, 1e-12)) / std::max(rd / std::max(sd, 1e-12), 1e-300));
      const double new_rho = std::clamp(rho * ratio, 1e-4, 1e4);
      if (new_rho > 5.0 * rho || new_rho < 0.2 * rho) {
        rho = new_rho;
        factor();
      }
    }
  }
  res.z = x;
  res.y = y;
  return res;
}

// Equality-constrained re-solve on the active set suggested by the ADMM duals.
std::optional<Vec> polish(const AdmmProblem& pr, const AdmmResult& ar) {
  const Eigen::Index N = pr.A.cols();
  const Eigen::Index M = pr.A.rows();
  const Vec Az = pr.A * ar.z;
  std::vector<Eigen::Index> rows;
  std::vector<double> rhs;
  for (Eigen::Index i = 0; i < M; ++i) {
    if (pr.u[i] == pr.l[i] || (ar.y[i] < 0 && Az[i] - pr.l[i] < -ar.y[i])) {
      rows.push_back(i);
      rhs.push_back(pr.l[i]);
    } else if (ar.y[i] > 0 && pr.u[i] - Az[i] < ar.y[i]) {
      rows.push_back(i);
      rhs.push_back(pr.u[i]);
    }
  }
  const Eigen::Index k = static_cast<Eigen::Index>(rows.size());
  std::vector<Trip> trips;
  for (int c = 0; c < pr.P.outerSize(); ++c)
    for (SpMat::InnerIterator itp(pr.P, c); itp; ++itp) trips.emplace_back(itp.row(), itp.col(), itp.value());
  const Eigen::SparseMatrix<double, Eigen::RowMajor> Ar = pr.A;
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator ita(Ar, rows[r]); ita; ++ita) {
      trips.emplace_back(N + r, ita.col(), ita.value());
      trips.emplace_back(ita.col(), N + r, ita.value());
    }
  SpMat K(N + k, N + k);
  K.setFromTriplets(trips.begin(), trips.end());
  Vec b = Vec::Zero(N + k);
  b.head(N) = -pr.q;
  for (Eigen::Index r = 0; r < k; ++r) b[N + r] = rhs[r];
  Eigen::SparseLU<SpMat> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success) return std::nullopt;
  Vec sol = lu.solve(b);
  if (!sol.allFinite() || (K * sol - b).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + b.lpNorm<Eigen::Infinity>()))
    return std::nullopt;
  return Vec(sol.head(N));
}

bool lti_applicable(const System& sys) {
  if (!sys.linear()) return false;
  if (sys.cost_kind() == CostKind::L1) return true;
  if (sys.cost_kind() == CostKind::Quadratic) return !sys.spec().terminal_cost || sys.terminal_tol().has_value();
  return false;
}

SolveResult solve_lti(const System& sys, const State& x0, double eps, int H, const SolverOptions& opts) {
  const int n = sys.n(), m = sys.m();
  const int blk = n + m;
  const Eigen::Index N = static_cast<Eigen::Index>(H) * blk;
  const Eigen::Index M = static_cast<Eigen::Index>(H) * (2 * n + m);
  const auto& lin = *sys.linear();
  auto ui = [&](int t) { return static_cast<Eigen::Index>(t) * blk; };      // u_t
  auto xi = [&](int t) { return static_cast<Eigen::Index>(t - 1) * blk + m; };  // x_t, t >= 1

  AdmmProblem pr;
  pr.w = Vec::Zero(M);
  std::vector<Trip> pt, at;
  double d = 1.0;
  for (int t = 0; t < H; ++t) {
    if (sys.cost_kind() == CostKind::Quadratic) {
      const auto& qc = *sys.quadratic();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
          if (qc.R(i, j) != 0.0) pt.emplace_back(ui(t) + i, ui(t) + j, 2.0 * d * qc.R(i, j));
      if (t >= 1)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            if (qc.Q(i, j) != 0.0) pt.emplace_back(xi(t) + i, xi(t) + j, 2.0 * d * qc.Q(i, j));
    } else {
      for (int j = 0; j < m; ++j) pr.w[2 * n * H + t * m + j] = d * sys.l1()->weight;
    }
    d *= sys.gamma();
    // Dynamics rows: x_{t+1} - A x_t - B u_t = (t == 0 ? A x0 : 0).
    for (int i = 0; i < n; ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(t) * n + i;
      at.emplace_back(r, xi(t + 1) + i, 1.0);
      for (int j = 0; j < m; ++j)
        if (lin.B(i, j) != 0.0) at.emplace_back(r, ui(t) + j, -lin.B(i, j));
      if (t >= 1)
        for (int j = 0; j < n; ++j)
          if (lin.A(i, j) != 0.0) at.emplace_back(r, xi(t) + j, -lin.A(i, j));
    }
    for (int i = 0; i < n; ++i) at.emplace_back(static_cast<Eigen::Index>(H) * n + t * n + i, xi(t + 1) + i, 1.0);
    for (int j = 0; j < m; ++j) at.emplace_back(2 * static_cast<Eigen::Index>(H) * n + t * m + j, ui(t) + j, 1.0);
  }
  pr.P.resize(N, N);
  pr.P.setFromTriplets(pt.begin(), pt.end());
  pr.q = Vec::Zero(N);
  pr.A.resize(M, N);
  pr.A.setFromTriplets(at.begin(), at.end());

  auto controls_of = [&](const Vec& z) {
    std::vector<Control> us(H);
    for (int t = 0; t < H; ++t) us[t] = z.segment(ui(t), m);
    return us;
  };

  const Vec Ax0 = lin.A * x0;
  SolveResult best;
  int iters = 0;
  for (double margin : kMargins) {
    const auto bounds = state_bounds(sys, eps, H, margin);
    bool empty = false;
    pr.l.resize(M);
    pr.u.resize(M);
    for (int t = 0; t < H; ++t) {
      const Vec rhs = t == 0 ? Ax0 : Vec::Zero(n);
      pr.l.segment(static_cast<Eigen::Index>(t) * n, n) = rhs;
      pr.u.segment(static_cast<Eigen::Index>(t) * n, n) = rhs;
      if (bounds[t].empty()) empty = true;
      pr.l.segment(static_cast<Eigen::Index>(H) * n + t * n, n) = bounds[t].lo();
      pr.u.segment(static_cast<Eigen::Index>(H) * n + t * n, n) = bounds[t].hi();
      pr.l.segment(2 * static_cast<Eigen::Index>(H) * n + t * m, m) = sys.U().lo();
      pr.u.segment(2 * static_cast<Eigen::Index>(H) * n + t * m, m) = sys.U().hi();
    }
    if (empty) break;
    const AdmmResult ar = admm(pr, opts.tol, opts.max_iter);
    iters += ar.iters;
    SolveResult r = finalize(sys, x0, eps, controls_of(ar.z), ar.converged, iters);
    if (opts.polish && sys.cost_kind() == CostKind::Quadratic && !ar.infeasible) {
      if (auto zp = polish(pr, ar)) {
        SolveResult rp = finalize(sys, x0, eps, controls_of(*zp), true, iters);
        if (rp.cost.finite() && (!r.cost.finite() || rp.cost.value() <= r.cost.value() + 1e-12)) {
          rp.status = SolveStatus::Optimal;
          r = std::move(rp);
        }
      }
    }
    if (!r.cost.finite() && !ar.infeasible) {
      // The ADMM iterate is close to feasible but its re-simulation is not
      // (open-loop error grows along the horizon). Project its controls onto
      // the feasible set: min ||u - u_admm||^2, a strongly convex QP that
      // ADMM plus polishing solves to machine precision.
      AdmmProblem proj = pr;
      std::vector<Trip> it2;
      proj.q = Vec::Zero(N);
      for (int t = 0; t < H; ++t)
        for (int j = 0; j < m; ++j) {
          it2.emplace_back(ui(t) + j, ui(t) + j, 2.0);
          proj.q[ui(t) + j] = -2.0 * ar.z[ui(t) + j];
        }
      proj.P.setZero();
      proj.P.setFromTriplets(it2.begin(), it2.end());
      proj.w.setZero();
      const AdmmResult ap = admm(proj, opts.tol, opts.max_iter);
      iters += ap.iters;
      std::optional<Vec> zp = ap.infeasible ? std::nullopt : polish(proj, ap);
      SolveResult rp = finalize(sys, x0, eps, controls_of(zp ? *zp : ap.z), false, iters);
      if (rp.cost.finite()) r = std::move(rp);
    }
    if (r.cost.finite()) return r;
    best = std::move(r);
    if (ar.infeasible) break;
  }
  best.iterations = iters;
  best.status = SolveStatus::Infeasible;
  best.cost = Cost::infeasible();
  return best;
}

// ---------------------------------------------------------------------------
// Nonlinear path: augmented Lagrangian on the state box around a single
// shooting formulation; inner problem over the control box by spectral
// projected gradient with a nonmonotone line search. Gradients by an adjoint
// sweep over finite-difference Jacobians of each step.

constexpr double kFdStep = 1e-6;

struct Shooting {
  const System& sys;
  State x0;
  int H;
  std::vector<Box> B;    // bounds for x_1..x_H
  std::vector<Vec> mu;   // multipliers for x_1..x_H
  double rho = 10.0;

  int n() const { return sys.n(); }
  int m() const { return sys.m(); }

  std::vector<State> forward(const Vec& z) const {
    std::vector<State> xs(H + 1);
    xs[0] = x0;
    for (int t = 0; t < H; ++t) xs[t + 1] = sys.dynamics(xs[t], z.segment(t * m(), m()));
    return xs;
  }

  double terminal(const State& x) const {
    if (sys.terminal_tol()) return 0.0;  // handled as a constraint
    const Cost F = sys.terminal_cost(x);
    return F.finite() ? F.value() : 0.0;
  }

  // Penalty residual d = w - proj(w), w = x + mu/rho.
  Vec resid(int t, const State& x) const {
    const Vec w = x + mu[t] / rho;
    return w - B[t].clamp(w);
  }

  double objective(const Vec& z, std::vector<State>* xs_out = nullptr) const {
    auto xs = forward(z);
    double J = 0.0, d = 1.0;
    for (int t = 0; t < H; ++t) {
      J += d * sys.stage_cost(xs[t], z.segment(t * m(), m()));
      d *= sys.gamma();
    }
    J += d * terminal(xs[H]);
    for (int t = 0; t < H; ++t) {
      const Vec r = resid(t, xs[t + 1]);
      J += 0.5 * rho * r.squaredNorm() - mu[t].squaredNorm() / (2.0 * rho);
    }
    if (xs_out) *xs_out = std::move(xs);
    return J;
  }

  Vec gradient(const Vec& z, const std::vector<State>& xs) const {
    const int n_ = n(), m_ = m();
    Vec g(H * m_);
    std::vector<double> disc(H + 1);
    disc[0] = 1.0;
    for (int t = 1; t <= H; ++t) disc[t] = disc[t - 1] * sys.gamma();

    // lambda = dL/dx_{t+1}, starting at x_H.
    Vec lam = rho * resid(H - 1, xs[H]);
    if (!sys.terminal_tol() && sys.spec().terminal_cost) {
      for (int i = 0; i < n_; ++i) {
        State a = xs[H], b = xs[H];
        a[i] += kFdStep;
        b[i] -= kFdStep;
        lam[i] += disc[H] * (terminal(a) - terminal(b)) / (2 * kFdStep);
      }
    }
    for (int t = H - 1; t >= 0; --t) {
      const State& x = xs[t];
      const Control u = z.segment(t * m_, m_);
      Mat Ax(n_, n_), Bu(n_, m_);
      Vec cx(n_), cu(m_);
      for (int i = 0; i < n_; ++i) {
        State a = x, b = x;
        a[i] += kFdStep;
        b[i] -= kFdStep;
        Ax.col(i) = (sys.dynamics(a, u) - sys.dynamics(b, u)) / (2 * kFdStep);
        if (sys.cost_kind() != CostKind::Quadratic)
          cx[i] = (sys.stage_cost(a, u) - sys.stage_cost(b, u)) / (2 * kFdStep);
      }
      for (int j = 0; j < m_; ++j) {
        Control a = u, b = u;
        a[j] += kFdStep;
        b[j] -= kFdStep;
        Bu.col(j) = (sys.dynamics(x, a) - sys.dynamics(x, b)) / (2 * kFdStep);
        if (sys.cost_kind() != CostKind::Quadratic)
          cu[j] = (sys.stage_cost(x, a) - sys.stage_cost(x, b)) / (2 * kFdStep);
      }
      if (sys.cost_kind() == CostKind::Quadratic) {
        cx = 2.0 * sys.quadratic()->Q * x;
        cu = 2.0 * sys.quadratic()->R * u;
      }
      g.segment(t * m_, m_) = disc[t] * cu + Bu.transpose() * lam;
      if (t >= 1) lam = disc[t] * cx + Ax.transpose() * lam + rho * resid(t - 1, x);
    }
    return g;
  }
};

struct SpgOutcome {
  Vec z;
  bool converged = false;
  int iters = 0;
};

Vec project_u(const System& sys, const Vec& z, int H) {
  Vec p = z;
  const int m = sys.m();
  for (int t = 0; t < H; ++t) p.segment(t * m, m) = sys.U().clamp(z.segment(t * m, m));
  return p;
}

SpgOutcome spg(const Shooting& sh, Vec z, double tol, int max_iter) {
  const int H = sh.H;
  std::vector<State> xs;
  double f = sh.objective(z, &xs);
  Vec g = sh.gradient(z, xs);
  std::deque<double> recent{f};
  double alpha = 1.0 / std::max(1e-8, g.lpNorm<Eigen::Infinity>());
  SpgOutcome out;
  for (int it = 1; it <= max_iter; ++it) {
    out.iters = it;
    const Vec pg = project_u(sh.sys, z - g, H) - z;
    if (pg.lpNorm<Eigen::Infinity>() <= tol) {
      out.converged = true;
      break;
    }
    const Vec d = project_u(sh.sys, z - alpha * g, H) - z;
    const double fmax = *std::max_element(recent.begin(), recent.end());
    const double gd = g.dot(d);
    double theta = 1.0;
    Vec zn;
    double fn = 0.0;
    std::vector<State> xsn;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      zn = z + theta * d;
      fn = sh.objective(zn, &xsn);
      if (fn <= fmax + 1e-4 * theta * gd) {
        accepted = true;
        break;
      }
      theta *= 0.5;
    }
    if (!accepted) break;
    const Vec gn = sh.gradient(zn, xsn);
    const Vec s = zn - z, yv = gn - g;
    const double sy = s.dot(yv);
    alpha = sy > 0 ? std::clamp(s.squaredNorm() / sy, 1e-10, 1e10) : 1e10;
    z = zn;
    g = gn;
    f = fn;
    recent.push_back(f);
    if (recent.size() > 10) recent.pop_front();
  }
  out.z = z;
  return out;
}

SolveResult solve_nonlinear_from(const System& sys, const State& x0, double eps, int H, const Vec& z0,
                                 double margin, const SolverOptions& opts) {
  Shooting sh{sys, x0, H, state_bounds(sys, eps, H, margin), std::vector<Vec>(H, Vec::Zero(sys.n()))};
  for (const auto& b : sh.B)
    if (b.empty()) return finalize(sys, x0, eps, split_controls(z0, H, sys.m()), false, 0);
  Vec z = project_u(sys, z0, H);
  int used = 0;
  double omega = 1e-2;
  double prev_viol = std::numeric_limits<double>::infinity();
  bool converged = false;
  int stalls = 0;
  for (int outer = 0; outer < 40 && used < opts.max_iter; ++outer) {
    const SpgOutcome o = spg(sh, z, omega, opts.max_iter - used);
    used += o.iters;
    z = o.z;
    const auto xs = sh.forward(z);
    double viol = 0.0;
    for (int t = 0; t < H; ++t) {
      viol = std::max(viol, (xs[t + 1] - sh.B[t].clamp(xs[t + 1])).lpNorm<Eigen::Infinity>());
      const Vec w = xs[t + 1] + sh.mu[t] / sh.rho;
      sh.mu[t] = sh.rho * (w - sh.B[t].clamp(w));
    }
    if (viol <= 1e-10 && o.converged && omega <= opts.tol) {
      converged = true;
      break;
    }
    if (viol > 0.25 * prev_viol) sh.rho = std::min(sh.rho * 10.0, 1e10);
    // Violation stuck well above zero while the penalty grows: give up on this start.
    stalls = (viol > 1e-3 && viol > 0.9 * prev_viol) ? stalls + 1 : 0;
    if (stalls >= 4) break;
    prev_viol = viol;
    omega = std::max(opts.tol, omega * 0.1);
  }
  return finalize(sys, x0, eps, split_controls(z, H, sys.m()), converged, used);
}

double max_violation(const System& sys, double eps, int H, const std::vector<State>& xs) {
  const auto B = state_bounds(sys, eps, H, 0.0);
  double v = 0.0;
  for (int t = 1; t <= H && t < static_cast<int>(xs.size()); ++t)
    v = std::max(v, (xs[t] - B[t - 1].clamp(xs[t])).lpNorm<Eigen::Infinity>());
  return v;
}

SolveResult best_of(const System& sys, const State& x0, double eps, int H, const std::vector<Vec>& starts,
                    const SolverOptions& opts) {
  SolveResult best;
  int total = 0;
  for (const auto& z0 : starts) {
    for (double margin : kMargins) {
      SolveResult r = solve_nonlinear_from(sys, x0, eps, H, z0, margin, opts);
      total += r.iterations;
      const bool done = r.cost.finite();
      // A wider margin only helps iterates that are nearly feasible.
      const bool hopeless = !done && max_violation(sys, eps, H, r.states) > 1e-4;
      if (best.controls.empty() || better(r, best)) best = std::move(r);
      if (done || hopeless) break;
    }
  }
  best.iterations = total;
  return best;
}

SolveResult solve_nonlinear(const System& sys, const State& x0, double eps, int H, const SolverOptions& opts) {
  const int N = H * sys.m();
  // gamma < 1: solve the undiscounted problem first and continue from its controls.
  if (sys.gamma() < 1.0) {
    const SolveResult pilot = solve_nonlinear(sys.with_gamma(1.0), x0, eps, H, opts);
    if (!pilot.cost.finite()) return finalize(sys, x0, eps, pilot.controls, false, pilot.iterations);
    Vec z(N);
    for (int t = 0; t < H; ++t) z.segment(t * sys.m(), sys.m()) = pilot.controls[t];
    SolveResult r = best_of(sys, x0, eps, H, {z}, opts);
    SolveResult fallback = finalize(sys, x0, eps, pilot.controls, false, 0);
    if (better(fallback, r)) r = std::move(fallback);
    r.iterations += pilot.iterations;
    return r;
  }
  std::vector<Vec> starts;
  starts.push_back(Vec::Zero(N));
  const std::uint64_t seed = hash_state(x0, opts.seed);
  Box Ubig(Vec::Zero(N), Vec::Zero(N));
  {
    Vec lo(N), hi(N);
    for (int t = 0; t < H; ++t) {
      lo.segment(t * sys.m(), sys.m()) = sys.U().lo();
      hi.segment(t * sys.m(), sys.m()) = sys.U().hi();
    }
    Ubig = Box(lo, hi);
  }
  for (int r = 0; r < opts.restarts; ++r) starts.push_back(counter_sample(Ubig, seed, static_cast<std::uint64_t>(r)));
  return best_of(sys, x0, eps, H, starts, opts);
}

void check_preconditions(const System& sys, const State& x0, double eps, int H) {
  if (x0.size() != sys.n()) throw NpmpcError("dimension_mismatch", "x0 has the wrong dimension");
  if (H < 1) throw NpmpcError("precondition", "horizon must be >= 1");
  if (!sys.X().contains(x0)) throw NpmpcError("precondition", "x0 is outside X");
  if (eps < 0) throw NpmpcError("precondition", "eps must be nonnegative");
  if (erode(sys.X(), eps).empty()) throw NpmpcError("precondition", "eroded state set is empty");
}

}  // namespace

SolveResult solve_horizon(const System& sys, const State& x0, double eps, int H, const SolverOptions& opts) {
  check_preconditions(sys, x0, eps, H);
  if (lti_applicable(sys)) return solve_lti(sys, x0, eps, H, opts);
  return solve_nonlinear(sys, x0, eps, H, opts);
}

SolveResult solve_conservative(const System& sys, const State& x0, double eps, const SolverOptions& opts) {
  return solve_horizon(sys, x0, eps, sys.T(), opts);
}

std::optional<Control> solve_conservative_mpc(const System& sys, const State& x0, double eps, int H,
                                              const SolverOptions& opts) {
  if (H < 1 || H > sys.T()) throw NpmpcError("precondition", fmt::format("H must lie in [1, {}]", sys.T()));
  const SolveResult r = solve_horizon(sys, x0, eps, H, opts);
  if (r.status == SolveStatus::Infeasible) return std::nullopt;
  return r.controls.front();
}

Assumption3Audit audit_assumption3(const System& sys, double eps, int samples, std::uint64_t seed, int jobs,
                                   const SolverOptions& opts) {
  Assumption3Audit audit;
  audit.eps = eps;
  audit.samples = samples;
  std::vector<char> bad(samples, 0);
  std::vector<State> xs(samples);
  parallel_for(samples, jobs, [&](std::size_t i) {
    xs[i] = counter_sample(sys.X(), seed, i);
    bad[i] = solve_conservative(sys, xs[i], eps, opts).status == SolveStatus::Infeasible;
  });
  for (int i = 0; i < samples; ++i)
    if (bad[i]) audit.violations.push_back(xs[i]);
  return audit;
}

void require_assumption3(const Assumption3Audit& audit) {
  if (audit.holds()) return;
  const auto& w = audit.violations.front();
  throw NpmpcError("assumption3_violated",
                   fmt::format("{} of {} sampled initial states infeasible at eps={} (first: [{}])",
                               audit.violations.size(), audit.samples, audit.eps,
                               fmt::join(std::vector<double>(w.data(), w.data() + w.size()), ", ")));
}

}  // namespace npmpc
