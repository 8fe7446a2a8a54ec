#include "npmpc/dp_oracle.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "npmpc/parallel.hpp"

namespace npmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::uint32_t kNoBase = std::numeric_limits<std::uint32_t>::max();

struct Grid {
  const Box* box;
  const std::vector<int>* counts;
  std::vector<std::size_t> stride;

  Grid(const Box& b, const std::vector<int>& c) : box(&b), counts(&c), stride(c.size()) {
    std::size_t s = 1;
    for (int a = static_cast<int>(c.size()) - 1; a >= 0; --a) {
      stride[a] = s;
      s *= static_cast<std::size_t>(c[a]);
    }
  }

  double coord(int a, int i) const {
    const int g = (*counts)[a];
    if (g == 1) return 0.5 * (box->lo()[a] + box->hi()[a]);
    if (i == g - 1) return box->hi()[a];
    return box->lo()[a] + i * (box->hi()[a] - box->lo()[a]) / (g - 1);
  }

  Eigen::VectorXd node(std::size_t idx) const {
    const int n = static_cast<int>(counts->size());
    Eigen::VectorXd x(n);
    for (int a = 0; a < n; ++a) {
      const int i = static_cast<int>((idx / stride[a]) % (*counts)[a]);
      x[a] = coord(a, i);
    }
    return x;
  }

  // Lowest corner and fractional offsets of x; false when x is outside the box.
  bool locate(const Eigen::VectorXd& x, std::uint32_t& base, std::array<double, 3>& frac) const {
    if (!box->contains(x)) return false;
    std::size_t b = 0;
    for (int a = 0; a < static_cast<int>(counts->size()); ++a) {
      const int g = (*counts)[a];
      if (g == 1) {
        frac[a] = 0.0;
        continue;
      }
      const double pitch = (box->hi()[a] - box->lo()[a]) / (g - 1);
      const double s = (x[a] - box->lo()[a]) / pitch;
      int i = static_cast<int>(std::floor(s));
      i = std::clamp(i, 0, g - 2);
      frac[a] = std::clamp(s - i, 0.0, 1.0);
      b += static_cast<std::size_t>(i) * stride[a];
    }
    base = static_cast<std::uint32_t>(b);
    return true;
  }

  // Corners with zero weight do not contribute (so exact node hits only
  // depend on that node).
  double interp(const std::vector<double>& table, std::uint32_t base, const double* frac) const {
    const int n = static_cast<int>(counts->size());
    double acc = 0.0;
    for (int mask = 0; mask < (1 << n); ++mask) {
      double w = 1.0;
      std::size_t idx = base;
      for (int a = 0; a < n; ++a) {
        if (mask & (1 << a)) {
          w *= frac[a];
          idx += stride[a];
        } else {
          w *= 1.0 - frac[a];
        }
      }
      if (w == 0.0) continue;
      const double v = table[idx];
      if (!std::isfinite(v)) return kInf;
      acc += w * v;
    }
    return acc;
  }
};

std::size_t product(const std::vector<int>& c) {
  std::size_t p = 1;
  for (int g : c) p *= static_cast<std::size_t>(g);
  return p;
}

Control control_at(const Box& U, const std::vector<int>& counts, std::size_t j) {
  Grid g(U, counts);
  return g.node(j);
}

}  // namespace

std::size_t DPOracle::nodes() const { return product(state_counts); }
std::size_t DPOracle::controls() const { return product(control_counts); }

Eigen::VectorXd DPOracle::node(int k, std::size_t idx) const {
  return Grid(k == 0 ? X0 : Xe, state_counts).node(idx);
}

Control DPOracle::control(std::size_t j) const { return control_at(U, control_counts, j); }

double DPOracle::pitch() const {
  double p = 0.0;
  for (int a = 0; a < n; ++a)
    if (state_counts[a] > 1) p = std::max(p, (Xe.hi()[a] - Xe.lo()[a]) / (state_counts[a] - 1));
  return p;
}

DPOracle dp_build(const System& sys, double eps, const DPOptions& opts) {
  if (sys.n() > 3) throw NpmpcError("oracle_unsupported", "grid oracle is limited to n <= 3");
  if (sys.terminal_tol())
    throw NpmpcError("oracle_unsupported", "terminal-constraint systems have no grid oracle");
  DPOracle o;
  o.n = sys.n();
  o.m = sys.m();
  o.T = sys.T();
  o.gamma = sys.gamma();
  o.eps = eps;
  o.state_counts = opts.state_grid.empty() ? std::vector<int>(sys.n(), 201) : opts.state_grid;
  o.control_counts = opts.control_grid.empty() ? std::vector<int>(sys.m(), 101) : opts.control_grid;
  if (static_cast<int>(o.state_counts.size()) != sys.n() || static_cast<int>(o.control_counts.size()) != sys.m())
    throw NpmpcError("dimension_mismatch", "grid counts do not match (n, m)");
  for (int g : o.state_counts)
    if (g < 2) throw NpmpcError("precondition", "state grid needs >= 2 points per axis");
  for (int g : o.control_counts)
    if (g < 1) throw NpmpcError("precondition", "control grid needs >= 1 point per axis");
  o.X0 = sys.X();
  o.Xe = erode(sys.X(), eps);
  if (o.Xe.empty()) throw NpmpcError("precondition", "eroded state set is empty");
  o.U = sys.U();
  o.system_hash = sys.hash();

  const std::size_t N = o.nodes();
  const std::size_t C = o.controls();
  const std::size_t T = static_cast<std::size_t>(o.T);
  const bool precompute = o.T >= 3;
  const std::size_t entries = N * T * 2 + (precompute ? N * C * (o.n + 2) : 0);
  if (N > std::numeric_limits<std::uint32_t>::max() / 2 || entries > opts.max_entries)
    throw NpmpcError("memory_guard", fmt::format("oracle needs {} table entries (limit {})", entries, opts.max_entries));

  const Grid g0(o.X0, o.state_counts), ge(o.Xe, o.state_counts);
  std::vector<Control> us(C);
  for (std::size_t j = 0; j < C; ++j) us[j] = o.control(j);

  o.J.assign(T, std::vector<double>(N, kInf));
  o.greedy.assign(T, std::vector<std::int32_t>(N, -1));

  // Successor interpolation data for the eroded grid (time-invariant).
  std::vector<std::uint32_t> base;
  std::vector<double> frac, stage;
  if (precompute) {
    base.assign(N * C, kNoBase);
    frac.assign(N * C * o.n, 0.0);
    stage.assign(N * C, 0.0);
    parallel_for(N, opts.jobs, [&](std::size_t p) {
      const State x = ge.node(p);
      std::array<double, 3> fr{};
      for (std::size_t j = 0; j < C; ++j) {
        const std::size_t e = p * C + j;
        stage[e] = sys.stage_cost(x, us[j]);
        std::uint32_t b;
        if (ge.locate(sys.dynamics(x, us[j]), b, fr)) {
          base[e] = b;
          for (int a = 0; a < o.n; ++a) frac[e * o.n + a] = fr[a];
        }
      }
    });
  }

  // Direct evaluation (no precompute) of one node against J_{k+1} or F.
  auto direct = [&](int k, const Grid& grid, std::size_t p) {
    const State x = grid.node(p);
    double best = kInf;
    std::int32_t arg = -1;
    std::array<double, 3> fr{};
    for (std::size_t j = 0; j < C; ++j) {
      const State y = sys.dynamics(x, us[j]);
      double next;
      if (k + 1 == o.T) {
        if (!o.Xe.contains(y)) continue;
        next = sys.terminal_cost(y).as_double();
      } else {
        std::uint32_t b;
        if (!ge.locate(y, b, fr)) continue;
        next = ge.interp(o.J[k + 1], b, fr.data());
      }
      if (!std::isfinite(next)) continue;
      const double v = sys.stage_cost(x, us[j]) + o.gamma * next;
      if (v < best) {
        best = v;
        arg = static_cast<std::int32_t>(j);
      }
    }
    o.J[k][p] = best;
    o.greedy[k][p] = arg;
  };

  for (int k = o.T - 1; k >= 0; --k) {
    if (k == 0 || k == o.T - 1 || !precompute) {
      const Grid& grid = k == 0 ? g0 : ge;
      parallel_for(N, opts.jobs, [&](std::size_t p) { direct(k, grid, p); });
      continue;
    }
    const auto& next = o.J[k + 1];
    parallel_for(N, opts.jobs, [&](std::size_t p) {
      double best = kInf;
      std::int32_t arg = -1;
      for (std::size_t j = 0; j < C; ++j) {
        const std::size_t e = p * C + j;
        if (base[e] == kNoBase) continue;
        const double nv = ge.interp(next, base[e], &frac[e * o.n]);
        if (!std::isfinite(nv)) continue;
        const double v = stage[e] + o.gamma * nv;
        if (v < best) {
          best = v;
          arg = static_cast<std::int32_t>(j);
        }
      }
      o.J[k][p] = best;
      o.greedy[k][p] = arg;
    });
  }
  return o;
}

Cost dp_query_k(const DPOracle& o, const System& sys, int k, const State& x) {
  if (x.size() != o.n) throw NpmpcError("dimension_mismatch", "query state has the wrong dimension");
  if (k < 0 || k > o.T) throw NpmpcError("precondition", "stage index out of range");
  if (k == o.T) return o.Xe.contains(x) ? sys.terminal_cost(x) : Cost::infeasible();
  const Grid g(k == 0 ? o.X0 : o.Xe, o.state_counts);
  std::uint32_t b;
  std::array<double, 3> fr{};
  if (!g.locate(x, b, fr)) return Cost::infeasible();
  const double v = g.interp(o.J[k], b, fr.data());
  return std::isfinite(v) ? Cost(v) : Cost::infeasible();
}

Cost dp_query(const DPOracle& o, const State& x) {
  if (x.size() != o.n) throw NpmpcError("dimension_mismatch", "query state has the wrong dimension");
  const Grid g(o.X0, o.state_counts);
  std::uint32_t b;
  std::array<double, 3> fr{};
  if (!g.locate(x, b, fr)) return Cost::infeasible();
  const double v = g.interp(o.J[0], b, fr.data());
  return std::isfinite(v) ? Cost(v) : Cost::infeasible();
}

std::optional<Control> dp_greedy(const DPOracle& o, const System& sys, int k, const State& x) {
  if (k < 0 || k >= o.T) throw NpmpcError("precondition", "stage index out of range");
  double best = kInf;
  std::optional<Control> arg;
  for (std::size_t j = 0; j < o.controls(); ++j) {
    const Control u = o.control(j);
    const Cost next = dp_query_k(o, sys, k + 1, sys.dynamics(x, u));
    if (!next.finite()) continue;
    const double v = sys.stage_cost(x, u) + o.gamma * next.value();
    if (v < best) {
      best = v;
      arg = u;
    }
  }
  return arg;
}

Cost dp_greedy_rollout(const DPOracle& o, const System& sys, const State& x0) {
  std::vector<Control> us;
  State x = x0;
  for (int k = 0; k < o.T; ++k) {
    auto u = dp_greedy(o, sys, k, x);
    if (!u) return Cost::infeasible();
    us.push_back(*u);
    x = sys.dynamics(x, *u);
  }
  return trajectory_cost(sys, x0, us, o.eps);
}

namespace {

constexpr char kMagic[5] = {'N', 'P', 'D', 'P', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw NpmpcError("io_error", "truncated oracle file");
  return v;
}

void put_box(std::ofstream& out, const Box& b) {
  for (Eigen::Index i = 0; i < b.dim(); ++i) put(out, b.lo()[i]);
  for (Eigen::Index i = 0; i < b.dim(); ++i) put(out, b.hi()[i]);
}

Box get_box(std::ifstream& in, int d) {
  Eigen::VectorXd lo(d), hi(d);
  for (int i = 0; i < d; ++i) lo[i] = get<double>(in);
  for (int i = 0; i < d; ++i) hi[i] = get<double>(in);
  return Box(lo, hi);
}

}  // namespace

void dp_save(const DPOracle& o, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NpmpcError("io_error", "cannot write oracle file '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(o.n));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(o.m));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(o.T));
  put(out, o.gamma);
  put(out, o.eps);
  for (int g : o.state_counts) put<std::uint32_t>(out, static_cast<std::uint32_t>(g));
  for (int g : o.control_counts) put<std::uint32_t>(out, static_cast<std::uint32_t>(g));
  put_box(out, o.X0);
  put_box(out, o.Xe);
  put_box(out, o.U);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(o.system_hash.size()));
  out.write(o.system_hash.data(), static_cast<std::streamsize>(o.system_hash.size()));
  for (const auto& t : o.J) out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  for (const auto& t : o.greedy)
    for (std::int32_t v : t) put(out, static_cast<double>(v));
  if (!out) throw NpmpcError("io_error", "failed writing oracle file '" + path + "'");
}

DPOracle dp_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NpmpcError("io_error", "cannot open oracle file '" + path + "'");
  char magic[5];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw NpmpcError("io_error", "'" + path + "' is not an oracle file");
  DPOracle o;
  o.n = static_cast<int>(get<std::uint32_t>(in));
  o.m = static_cast<int>(get<std::uint32_t>(in));
  o.T = static_cast<int>(get<std::uint32_t>(in));
  if (o.n < 1 || o.n > 3 || o.m < 1 || o.m > 64 || o.T < 1) throw NpmpcError("io_error", "corrupt oracle header");
  o.gamma = get<double>(in);
  o.eps = get<double>(in);
  for (int a = 0; a < o.n; ++a) o.state_counts.push_back(static_cast<int>(get<std::uint32_t>(in)));
  for (int a = 0; a < o.m; ++a) o.control_counts.push_back(static_cast<int>(get<std::uint32_t>(in)));
  o.X0 = get_box(in, o.n);
  o.Xe = get_box(in, o.n);
  o.U = get_box(in, o.m);
  const auto hl = get<std::uint32_t>(in);
  if (hl > 256) throw NpmpcError("io_error", "corrupt oracle header");
  o.system_hash.resize(hl);
  in.read(o.system_hash.data(), hl);
  const std::size_t N = o.nodes();
  o.J.assign(o.T, std::vector<double>(N));
  for (auto& t : o.J) in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(N * sizeof(double)));
  o.greedy.assign(o.T, std::vector<std::int32_t>(N));
  for (auto& t : o.greedy)
    for (auto& v : t) v = static_cast<std::int32_t>(get<double>(in));
  if (!in) throw NpmpcError("io_error", "truncated oracle file");
  return o;
}

DPOracle dp_build_cached(const System& sys, double eps, const DPOptions& opts, const std::string& path) {
  if (path.empty()) return dp_build(sys, eps, opts);
  const std::vector<int> sg = opts.state_grid.empty() ? std::vector<int>(sys.n(), 201) : opts.state_grid;
  const std::vector<int> cg = opts.control_grid.empty() ? std::vector<int>(sys.m(), 101) : opts.control_grid;
  if (std::ifstream(path).good()) {
    try {
      DPOracle o = dp_load(path);
      if (o.system_hash == sys.hash() && o.eps == eps && o.state_counts == sg && o.control_counts == cg) return o;
    } catch (const NpmpcError&) {
    }
  }
  DPOracle o = dp_build(sys, eps, opts);
  dp_save(o, path);
  return o;
}

}  // namespace npmpc
