#include "npmpc/cost.hpp"

#include <fmt/format.h>

#include <limits>

namespace npmpc {

double Cost::as_double() const {
  return value_ ? *value_ : std::numeric_limits<double>::infinity();
}

std::string Cost::to_string() const {
  if (!value_) return "inf";
  return fmt::format("{:.17g}", *value_);
}

Cost Cost::from_string(const std::string& s) {
  if (s == "inf") return infeasible();
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw NpmpcError("parse_error", "bad cost literal '" + s + "'");
  return Cost(v);
}

}  // namespace npmpc
