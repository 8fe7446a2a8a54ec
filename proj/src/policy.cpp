#include "npmpc/policy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace npmpc {

namespace {
thread_local std::size_t g_last_visited = 0;
}

double lambda_min(double gamma, double L_f, double L_J) {
  if (!(gamma * L_f < 1.0))
    throw NpmpcError("gamma_Lf_condition_failed", fmt::format("gamma*L_f = {} is not < 1", gamma * L_f));
  return (1.0 + gamma * L_f) / (1.0 - gamma * L_f) * L_J;
}

double lambda_min(const System& sys) {
  return lambda_min(sys.gamma(), sys.lipschitz().L_f, sys.lipschitz().L_J);
}

ScoreIndex::ScoreIndex(const Dataset& ds) {
  const std::size_t N = ds.size();
  n_ = N ? static_cast<int>(ds[0].x.size()) : 0;
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ds[a].j < ds[b].j; });
  x_.resize(N * n_);
  j_.resize(N);
  id_ = order;
  cols_.assign(n_, std::vector<double>(N));
  for (std::size_t k = 0; k < N; ++k) {
    const auto& t = ds[order[k]];
    j_[k] = t.j;
    for (int a = 0; a < n_; ++a) x_[k * n_ + a] = cols_[a][k] = t.x[a];
  }
}

double ScoreIndex::dist(std::size_t k, const State& x, const Norm& norm) const {
  const double* p = &x_[k * n_];
  switch (norm.kind) {
    case NormKind::Inf: {
      double d = 0.0;
      for (int a = 0; a < n_; ++a) d = std::max(d, std::abs(x[a] - p[a]));
      return d;
    }
    case NormKind::Two: {
      double d = 0.0;
      for (int a = 0; a < n_; ++a) d += (x[a] - p[a]) * (x[a] - p[a]);
      return std::sqrt(d);
    }
    case NormKind::P: {
      double d = 0.0;
      for (int a = 0; a < n_; ++a) d += std::pow(std::abs(x[a] - p[a]), norm.p);
      return std::pow(d, 1.0 / norm.p);
    }
  }
  return 0.0;
}

namespace {

constexpr std::size_t kBlock = 16;

// l-infinity scan over columnar coordinates. Scores of a block are computed
// branch-free; only blocks that can improve on `best` are revisited serially.
template <int N>
std::size_t scan_inf(const std::vector<std::vector<double>>& cols, const double* js, const std::size_t* ids,
                     std::size_t count, const double* q, double lambda, double& best, std::size_t& arg) {
  const double* c[N];
  for (int a = 0; a < N; ++a) c[a] = cols[a].data();
  std::size_t k = 0;
  double sc[kBlock];
  for (; k < count; k += kBlock) {
    if (js[k] > best) break;
    const std::size_t len = std::min(kBlock, count - k);
    double mn = std::numeric_limits<double>::infinity();
    if (len == kBlock) {
      for (std::size_t i = 0; i < kBlock; ++i) {
        double d = std::abs(q[0] - c[0][k + i]);
        for (int a = 1; a < N; ++a) d = std::max(d, std::abs(q[a] - c[a][k + i]));
        sc[i] = js[k + i] + lambda * d;
      }
      for (std::size_t i = 0; i < kBlock; ++i) mn = std::min(mn, sc[i]);
    } else {
      for (std::size_t i = 0; i < len; ++i) {
        double d = std::abs(q[0] - c[0][k + i]);
        for (int a = 1; a < N; ++a) d = std::max(d, std::abs(q[a] - c[a][k + i]));
        sc[i] = js[k + i] + lambda * d;
        mn = std::min(mn, sc[i]);
      }
    }
    if (mn > best) continue;
    for (std::size_t i = 0; i < len; ++i)
      if (sc[i] < best || (sc[i] == best && ids[k + i] < arg)) {
        best = sc[i];
        arg = ids[k + i];
      }
  }
  return std::min(k, count);
}

}  // namespace

std::pair<std::size_t, double> ScoreIndex::argmin(const State& x, double lambda, const Norm& norm) const {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  std::size_t k = 0;
  if (norm.kind == NormKind::Inf && n_ >= 1 && n_ <= 4) {
    const double* q = x.data();
    switch (n_) {
      case 1: k = scan_inf<1>(cols_, j_.data(), id_.data(), j_.size(), q, lambda, best, arg); break;
      case 2: k = scan_inf<2>(cols_, j_.data(), id_.data(), j_.size(), q, lambda, best, arg); break;
      case 3: k = scan_inf<3>(cols_, j_.data(), id_.data(), j_.size(), q, lambda, best, arg); break;
      default: k = scan_inf<4>(cols_, j_.data(), id_.data(), j_.size(), q, lambda, best, arg); break;
    }
    g_last_visited = k;
    return {arg, best};
  }
  for (; k < j_.size(); ++k) {
    if (j_[k] > best) break;
    const double s = j_[k] + lambda * dist(k, x, norm);
    if (s < best || (s == best && id_[k] < arg)) {
      best = s;
      arg = id_[k];
    }
  }
  g_last_visited = k;
  return {arg, best};
}

double ScoreIndex::max_lower(const State& x, double lambda, const Norm& norm) const {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = j_.size(); k-- > 0;) {
    if (j_[k] < best) break;
    best = std::max(best, j_[k] - lambda * dist(k, x, norm));
  }
  return best;
}

std::size_t ScoreIndex::last_visited() { return g_last_visited; }

NppPolicy::NppPolicy(std::shared_ptr<const Dataset> ds, double lambda, std::optional<Norm> norm)
    : ds_(std::move(ds)), lambda_(lambda), norm_(norm.value_or(ds_->norm())), index_(*ds_) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw NpmpcError("invalid_lambda", "lambda must be positive");
}

NppPolicy::NppPolicy(const Dataset& ds, double lambda, std::optional<Norm> norm)
    : NppPolicy(std::make_shared<const Dataset>(ds), lambda, norm) {}

NppPolicy NppPolicy::for_system(const Dataset& ds, const System& sys, std::optional<double> lambda) {
  const bool condition = sys.gamma() * sys.lipschitz().L_f < 1.0;
  if (!lambda && !condition)
    throw NpmpcError("gamma_Lf_condition_failed",
                     fmt::format("gamma*L_f = {} >= 1: pass an explicit lambda (uncertified mode)",
                                 sys.gamma() * sys.lipschitz().L_f));
  const double lmin = condition ? lambda_min(sys) : 0.0;
  NppPolicy p(ds, lambda.value_or(lmin));
  p.certified_ = condition && p.lambda_ >= lmin;
  return p;
}

void NppPolicy::require_nonempty() const {
  if (ds_->empty()) throw NpmpcError("empty_dataset", "policy dataset is empty");
}

Action NppPolicy::act(const State& x) const {
  require_nonempty();
  const auto [i, s] = index_.argmin(x, lambda_, norm_);
  return {(*ds_)[i].u, i, s};
}

Action NppPolicy::act_bruteforce(const State& x) const {
  require_nonempty();
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < ds_->size(); ++i) {
    const double s = (*ds_)[i].j + lambda_ * norm_(x - (*ds_)[i].x);
    if (s < best) {
      best = s;
      arg = i;
    }
  }
  return {(*ds_)[arg].u, arg, best};
}

double NppPolicy::j_upper(const State& x) const {
  require_nonempty();
  return index_.argmin(x, lambda_, norm_).second;
}

double NppPolicy::j_lower(const State& x) const {
  require_nonempty();
  return index_.max_lower(x, lambda_, norm_);
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  if (hi == lo || pos == static_cast<double>(lo)) return v[lo];
  if (std::isinf(v[hi])) return v[hi];
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

LatencyStats query_latency_bench(const NppPolicy& policy, const std::vector<State>& queries, int repeats,
                                 int warmup) {
  LatencyStats st;
  if (repeats <= 0 || queries.empty()) return st;
  using clock = std::chrono::steady_clock;
  volatile std::size_t sink = 0;
  for (int w = 0; w < warmup; ++w) sink = sink + policy.act(queries[w % queries.size()]).index;
  std::vector<double> ns;
  ns.reserve(queries.size() * repeats);
  for (int r = 0; r < repeats; ++r)
    for (const auto& q : queries) {
      const auto t0 = clock::now();
      sink = sink + policy.act(q).index;
      const auto t1 = clock::now();
      ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
    }
  st.samples = ns.size();
  st.mean_ns = std::accumulate(ns.begin(), ns.end(), 0.0) / static_cast<double>(ns.size());
  st.p50_ns = quantile(ns, 0.5);
  st.p90_ns = quantile(ns, 0.9);
  st.p99_ns = quantile(ns, 0.99);
  return st;
}

}  // namespace npmpc
