#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>

namespace npmpc {

using State = Eigen::VectorXd;
using Control = Eigen::VectorXd;

/// Named failure raised by library operations. `code()` is a stable
/// identifier such as "gamma_Lf_condition_failed" that callers can match.
class NpmpcError : public std::runtime_error {
 public:
  NpmpcError(std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

/// Nonnegative cost value or the "infeasible" marker.
///
/// The marker is kept separate from IEEE infinity so that it survives
/// serialization unambiguously (it is written as the string "inf").
class Cost {
 public:
  Cost() : value_(0.0) {}
  explicit Cost(double v) : value_(v) {}

  static Cost infeasible() { return Cost(std::nullopt); }

  bool finite() const { return value_.has_value(); }
  bool is_infeasible() const { return !value_.has_value(); }

  /// Throws if infeasible.
  double value() const {
    if (!value_) throw NpmpcError("infeasible_cost", "cost is the infeasible marker");
    return *value_;
  }
  /// Value with +inf standing in for the marker; for arithmetic and ranking.
  double as_double() const;

  Cost operator+(const Cost& o) const {
    if (!finite() || !o.finite()) return infeasible();
    return Cost(*value_ + *o.value_);
  }
  Cost operator*(double s) const {
    if (!finite()) return infeasible();
    return Cost(*value_ * s);
  }
  bool operator<(const Cost& o) const { return as_double() < o.as_double(); }
  bool operator==(const Cost& o) const { return value_ == o.value_; }

  /// "inf" for the marker, otherwise the number with 17 significant digits.
  std::string to_string() const;
  static Cost from_string(const std::string& s);

 private:
  explicit Cost(std::nullopt_t) : value_(std::nullopt) {}
  std::optional<double> value_;
};

}  // namespace npmpc
