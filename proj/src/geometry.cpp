#include "npmpc/geometry.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace npmpc {

Norm Norm::lp(double p) {
  if (!(p >= 1.0)) throw NpmpcError("invalid_norm", fmt::format("p must be >= 1, got {}", p));
  if (std::isinf(p)) return inf();
  if (p == 2.0) return two();
  return {NormKind::P, p};
}

double Norm::operator()(const Eigen::VectorXd& v) const {
  switch (kind) {
    case NormKind::Inf:
      return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
    case NormKind::Two:
      return v.norm();
    case NormKind::P: {
      double s = 0.0;
      for (Eigen::Index i = 0; i < v.size(); ++i) s += std::pow(std::abs(v[i]), p);
      return std::pow(s, 1.0 / p);
    }
  }
  return 0.0;
}

std::string Norm::name() const {
  switch (kind) {
    case NormKind::Inf: return "inf";
    case NormKind::Two: return "two";
    case NormKind::P: return fmt::format("p{:.17g}", p);
  }
  return "inf";
}

Norm Norm::parse(const std::string& s) {
  if (s == "inf") return inf();
  if (s == "two" || s == "2") return two();
  if (!s.empty() && s[0] == 'p') return lp(std::stod(s.substr(1)));
  throw NpmpcError("invalid_norm", "unknown norm '" + s + "'");
}

Box::Box(Eigen::VectorXd lo, Eigen::VectorXd hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw NpmpcError("dimension_mismatch", "box bounds differ in length");
  empty_ = false;
  for (Eigen::Index i = 0; i < lo_.size(); ++i) {
    if (!std::isfinite(lo_[i]) || !std::isfinite(hi_[i]))
      throw NpmpcError("invalid_box", "box bounds must be finite");
    if (lo_[i] > hi_[i]) empty_ = true;
  }
}

Box Box::empty_box(int n) {
  Box b;
  b.lo_ = Eigen::VectorXd::Zero(n);
  b.hi_ = Eigen::VectorXd::Zero(n);
  b.empty_ = true;
  return b;
}

Box Box::cube(int n, double half_side) {
  return Box(Eigen::VectorXd::Constant(n, -half_side), Eigen::VectorXd::Constant(n, half_side));
}

bool Box::contains(const Eigen::VectorXd& x) const {
  if (empty_ || x.size() != lo_.size()) return false;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!(x[i] >= lo_[i] && x[i] <= hi_[i])) return false;
  return true;
}

bool Box::contains(const Box& o) const {
  if (o.empty_) return true;
  if (empty_) return false;
  return (o.lo_.array() >= lo_.array()).all() && (o.hi_.array() <= hi_.array()).all();
}

Eigen::VectorXd Box::clamp(const Eigen::VectorXd& x) const {
  return x.cwiseMax(lo_).cwiseMin(hi_);
}

bool Box::operator==(const Box& o) const {
  if (empty_ || o.empty_) return empty_ == o.empty_;
  return lo_ == o.lo_ && hi_ == o.hi_;
}

Box erode(const Box& X, double eps, const Norm& /*norm*/) {
  if (X.empty()) throw NpmpcError("empty_box", "cannot erode an empty box");
  if (!(eps >= 0.0)) throw NpmpcError("invalid_eps", "erosion level must be >= 0");
  if (eps == 0.0) return X;
  Eigen::VectorXd lo = X.lo().array() + eps;
  Eigen::VectorXd hi = X.hi().array() - eps;
  if ((lo.array() > hi.array()).any()) return Box::empty_box(X.dim());
  return Box(lo, hi);
}

BoundaryDistance dist_to_boundary(const Eigen::VectorXd& x, const Box& X, const Norm& /*norm*/) {
  if (X.empty() || !X.contains(x)) return {0.0, true};
  double d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.size(); ++i)
    d = std::min({d, x[i] - X.lo()[i], X.hi()[i] - x[i]});
  return {d, false};
}

std::vector<Eigen::VectorXd> uniform_grid(const Box& X, int g) {
  if (g < 1) throw NpmpcError("invalid_grid", "grid must have at least one point per axis");
  if (X.empty()) return {};
  const int n = X.dim();
  double total = std::pow(static_cast<double>(g), n);
  if (total > 1e8) throw NpmpcError("grid_too_large", fmt::format("{}^{} points exceeds 1e8", g, n));
  std::vector<std::vector<double>> axes(n);
  for (int d = 0; d < n; ++d) {
    if (g == 1) {
      axes[d] = {0.5 * (X.lo()[d] + X.hi()[d])};
      continue;
    }
    for (int k = 0; k < g; ++k) {
      double t = static_cast<double>(k) / (g - 1);
      axes[d].push_back(k == g - 1 ? X.hi()[d] : X.lo()[d] + t * (X.hi()[d] - X.lo()[d]));
    }
  }
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(total));
  std::vector<int> idx(n, 0);
  while (true) {
    Eigen::VectorXd p(n);
    for (int d = 0; d < n; ++d) p[d] = axes[d][idx[d]];
    pts.push_back(std::move(p));
    int d = n - 1;
    while (d >= 0 && ++idx[d] == static_cast<int>(axes[d].size())) idx[d--] = 0;
    if (d < 0) break;
  }
  return pts;
}

namespace {

std::vector<std::uint64_t> per_axis_cover_counts(const Box& X, double r) {
  if (X.empty()) throw NpmpcError("empty_box", "covering number of an empty box");
  if (!(r > 0.0)) throw NpmpcError("invalid_radius", "covering radius must be > 0");
  std::vector<std::uint64_t> k(X.dim());
  for (int d = 0; d < X.dim(); ++d) {
    double side = X.hi()[d] - X.lo()[d];
    double c = std::ceil(side / (2.0 * r));
    if (c > 1e15) throw NpmpcError("cover_too_large", "covering number overflows");
    k[d] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(c));
  }
  return k;
}

}  // namespace

std::uint64_t covering_number_box(const Box& X, double r) {
  std::uint64_t total = 1;
  for (auto k : per_axis_cover_counts(X, r)) {
    if (k != 0 && total > std::numeric_limits<std::uint64_t>::max() / k)
      throw NpmpcError("cover_too_large", "covering number overflows");
    total *= k;
  }
  return total;
}

std::vector<Eigen::VectorXd> cover_centers(const Box& X, double r) {
  auto k = per_axis_cover_counts(X, r);
  const int n = X.dim();
  double total = 1.0;
  for (auto v : k) total *= static_cast<double>(v);
  if (total > 1e8) throw NpmpcError("grid_too_large", "too many cover centers");
  std::vector<Eigen::VectorXd> pts;
  std::vector<std::uint64_t> idx(n, 0);
  while (true) {
    Eigen::VectorXd p(n);
    for (int d = 0; d < n; ++d) {
      double side = X.hi()[d] - X.lo()[d];
      p[d] = X.lo()[d] + side * (2.0 * idx[d] + 1.0) / (2.0 * k[d]);
    }
    pts.push_back(std::move(p));
    int d = n - 1;
    while (d >= 0 && ++idx[d] == k[d]) idx[d--] = 0;
    if (d < 0) break;
  }
  return pts;
}

namespace {

struct Rect {
  std::vector<double> lo, hi;
};

// Overlap test used by the exact cover: a positive-measure intersection in
// every non-degenerate axis, containment of the coordinate in degenerate ones.
bool overlaps(const Rect& r, const double* blo, const double* bhi, int n) {
  for (int d = 0; d < n; ++d) {
    if (r.hi[d] > r.lo[d]) {
      if (!(std::min(r.hi[d], bhi[d]) > std::max(r.lo[d], blo[d]))) return false;
    } else if (!(blo[d] <= r.lo[d] && r.hi[d] <= bhi[d])) {
      return false;
    }
  }
  return true;
}

bool contains_rect(const double* blo, const double* bhi, const Rect& r, int n) {
  for (int d = 0; d < n; ++d)
    if (!(blo[d] <= r.lo[d] && r.hi[d] <= bhi[d])) return false;
  return true;
}

double overlap_volume(const Rect& r, const double* blo, const double* bhi, int n) {
  double v = 1.0;
  for (int d = 0; d < n; ++d) {
    double w = std::min(r.hi[d], bhi[d]) - std::max(r.lo[d], blo[d]);
    if (r.hi[d] > r.lo[d]) v *= std::max(w, 0.0);
  }
  return v;
}

bool in_any(const std::vector<double>& lo, const std::vector<double>& hi, int n,
            const Eigen::VectorXd& x) {
  const std::size_t m = lo.size() / n;
  for (std::size_t i = 0; i < m; ++i) {
    bool in = true;
    for (int d = 0; d < n && in; ++d) in = x[d] >= lo[i * n + d] && x[d] <= hi[i * n + d];
    if (in) return true;
  }
  return false;
}

Eigen::VectorXd pick_witness(const Rect& r, const std::vector<double>& lo,
                             const std::vector<double>& hi, int n) {
  // The interior of r minus finitely many null boxes is nonempty; probe a
  // small lattice and fall back to the center.
  const int k = 5;
  Eigen::VectorXd c(n);
  for (int d = 0; d < n; ++d) c[d] = 0.5 * (r.lo[d] + r.hi[d]);
  if (!in_any(lo, hi, n, c)) return c;
  std::vector<int> idx(n, 0);
  while (true) {
    Eigen::VectorXd p(n);
    for (int d = 0; d < n; ++d) p[d] = r.lo[d] + (r.hi[d] - r.lo[d]) * (idx[d] + 0.5) / k;
    if (!in_any(lo, hi, n, p)) return p;
    int d = n - 1;
    while (d >= 0 && ++idx[d] == k) idx[d--] = 0;
    if (d < 0) break;
  }
  return c;
}

CoverResult exact_linf_cover(const std::vector<Eigen::VectorXd>& centers,
                             const std::vector<double>& radii, const Box& X, double slack) {
  const int n = X.dim();
  const std::size_t m = centers.size();
  std::vector<double> lo(m * n), hi(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double r = radii[i] + slack;
    for (int d = 0; d < n; ++d) {
      lo[i * n + d] = centers[i][d] - r;
      hi[i * n + d] = centers[i][d] + r;
    }
  }
  struct Item {
    Rect region;
    std::vector<std::uint32_t> cand;
  };
  std::vector<Item> stack;
  Item root;
  root.region.lo.assign(X.lo().data(), X.lo().data() + n);
  root.region.hi.assign(X.hi().data(), X.hi().data() + n);
  for (std::size_t i = 0; i < m; ++i)
    if (radii[i] + slack >= 0.0) root.cand.push_back(static_cast<std::uint32_t>(i));
  stack.push_back(std::move(root));

  while (!stack.empty()) {
    Item item = std::move(stack.back());
    stack.pop_back();
    std::vector<std::uint32_t> live;
    live.reserve(item.cand.size());
    bool done = false;
    for (auto i : item.cand) {
      const double* blo = &lo[i * n];
      const double* bhi = &hi[i * n];
      if (!overlaps(item.region, blo, bhi, n)) continue;
      if (contains_rect(blo, bhi, item.region, n)) {
        done = true;
        break;
      }
      live.push_back(i);
    }
    if (done) continue;
    if (live.empty()) {
      CoverResult res;
      res.covered = false;
      res.exact = true;
      res.witness = pick_witness(item.region, lo, hi, n);
      return res;
    }
    std::uint32_t best = live.front();
    double best_v = -1.0;
    for (auto i : live) {
      double v = overlap_volume(item.region, &lo[i * n], &hi[i * n], n);
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    const double* blo = &lo[best * n];
    const double* bhi = &hi[best * n];
    Rect rest = item.region;
    for (int d = 0; d < n; ++d) {
      if (rest.lo[d] < blo[d]) {
        Rect piece = rest;
        piece.hi[d] = blo[d];
        stack.push_back({std::move(piece), live});
        rest.lo[d] = blo[d];
      }
      if (bhi[d] < rest.hi[d]) {
        Rect piece = rest;
        piece.lo[d] = bhi[d];
        stack.push_back({std::move(piece), live});
        rest.hi[d] = bhi[d];
      }
    }
  }
  CoverResult res;
  res.covered = true;
  res.exact = true;
  return res;
}

CoverResult probe_cover(const std::vector<Eigen::VectorXd>& centers,
                        const std::vector<double>& radii, const Box& X, const Norm& norm,
                        const CoverOptions& opts) {
  CoverResult res;
  res.exact = false;
  double rmin = std::numeric_limits<double>::infinity();
  for (double r : radii) rmin = std::min(rmin, r + opts.slack);
  double res_step = rmin > 0.0 ? rmin / 10.0 : 0.0;
  const int n = X.dim();
  // Per-axis probe count from the resolution, capped by max_probes.
  double maxside = (X.hi() - X.lo()).maxCoeff();
  int g = res_step > 0.0 ? static_cast<int>(std::ceil(maxside / res_step)) + 1 : 2;
  int cap = std::max(2, static_cast<int>(std::floor(std::pow(static_cast<double>(opts.max_probes), 1.0 / n))));
  g = std::clamp(g, 2, cap);
  res.probe_resolution = maxside / (g - 1);
  for (const auto& p : uniform_grid(X, g)) {
    ++res.probes;
    bool hit = false;
    for (std::size_t i = 0; i < centers.size() && !hit; ++i)
      hit = norm(p - centers[i]) <= radii[i] + opts.slack;
    if (!hit) {
      res.covered = false;
      res.witness = p;
      return res;
    }
  }
  res.covered = true;
  return res;
}

}  // namespace

CoverResult is_cover(const std::vector<Eigen::VectorXd>& centers, const std::vector<double>& radii,
                     const Box& X, const Norm& norm, const CoverOptions& opts) {
  if (centers.size() != radii.size())
    throw NpmpcError("dimension_mismatch", "centers and radii differ in length");
  if (X.empty()) return {true, true, std::nullopt, 0.0, 0};
  for (const auto& c : centers)
    if (c.size() != X.dim()) throw NpmpcError("dimension_mismatch", "center dimension differs from X");
  if (norm.kind == NormKind::Inf) return exact_linf_cover(centers, radii, X, opts.slack);
  return probe_cover(centers, radii, X, norm, opts);
}

}  // namespace npmpc
