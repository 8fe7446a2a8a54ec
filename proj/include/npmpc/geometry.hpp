#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "npmpc/cost.hpp"

namespace npmpc {

enum class NormKind { Inf, Two, P };

/// A vector norm: l-infinity (the default everywhere), l2, or a general lp.
struct Norm {
  NormKind kind = NormKind::Inf;
  double p = 2.0;  // only read when kind == P

  static Norm inf() { return {NormKind::Inf, 0.0}; }
  static Norm two() { return {NormKind::Two, 2.0}; }
  static Norm lp(double p);

  double operator()(const Eigen::VectorXd& v) const;
  std::string name() const;
  static Norm parse(const std::string& s);
  bool operator==(const Norm& o) const { return kind == o.kind && (kind != NormKind::P || p == o.p); }
};

/// Closed axis-aligned box [lo, hi], or the empty set.
class Box {
 public:
  Box() : empty_(true) {}
  Box(Eigen::VectorXd lo, Eigen::VectorXd hi);
  static Box empty_box(int n);
  static Box cube(int n, double half_side);

  int dim() const { return static_cast<int>(lo_.size()); }
  bool empty() const { return empty_; }
  const Eigen::VectorXd& lo() const { return lo_; }
  const Eigen::VectorXd& hi() const { return hi_; }
  Eigen::VectorXd center() const { return 0.5 * (lo_ + hi_); }
  Eigen::VectorXd half_widths() const { return 0.5 * (hi_ - lo_); }

  bool contains(const Eigen::VectorXd& x) const;
  bool contains(const Box& other) const;
  /// Projection onto the box (componentwise clamp).
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;

  bool operator==(const Box& o) const;

 private:
  Eigen::VectorXd lo_, hi_;
  bool empty_ = false;
};

/// X minus the eps-ball (Pontryagin difference). The dual norm of every
/// coordinate axis is 1 for all lp norms, so the box shrinks by eps on each
/// side regardless of `norm`. An inverted interval gives the empty box.
Box erode(const Box& X, double eps, const Norm& norm = Norm::inf());

struct BoundaryDistance {
  double dist = 0.0;
  bool outside = false;
};

/// Distance from x to the boundary of X; 0 with `outside` set when x is not
/// in the interior.
BoundaryDistance dist_to_boundary(const Eigen::VectorXd& x, const Box& X,
                                  const Norm& norm = Norm::inf());

/// g^n points: Cartesian product of per-axis linspaces with endpoints.
/// g == 1 gives the center. Throws "grid_too_large" above 1e8 points.
std::vector<Eigen::VectorXd> uniform_grid(const Box& X, int g);

/// Number of l-infinity balls of radius r needed to cover X:
/// prod_i ceil((hi_i - lo_i) / (2r)), each factor at least 1.
std::uint64_t covering_number_box(const Box& X, double r);

/// Centers realizing covering_number_box (pitch <= 2r per axis).
std::vector<Eigen::VectorXd> cover_centers(const Box& X, double r);

struct CoverResult {
  bool covered = false;
  /// True when decided by exact box arithmetic (l-infinity); false for the
  /// grid-probing check used by other norms.
  bool exact = true;
  std::optional<Eigen::VectorXd> witness;  // an uncovered point when !covered
  double probe_resolution = 0.0;           // probabilistic mode only
  std::uint64_t probes = 0;
};

struct CoverOptions {
  /// Absolute inflation applied to every radius. Zero gives the plain test;
  /// certificates use a small positive value to absorb rounding in radii
  /// that equal the cell half-width in exact arithmetic.
  double slack = 0.0;
  std::uint64_t max_probes = 4'000'000;
};

/// Whether the union of balls B(centers[i], radii[i]) contains X.
CoverResult is_cover(const std::vector<Eigen::VectorXd>& centers,
                     const std::vector<double>& radii, const Box& X,
                     const Norm& norm = Norm::inf(), const CoverOptions& opts = {});

}  // namespace npmpc
