#include "npmpc/dataset.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <unordered_map>

namespace npmpc {

namespace {

// Hash grid over quantized coordinates; a query inspects the 3^n cells
// around its own so matches within `tol` are never missed.
class PointIndex {
 public:
  explicit PointIndex(double tol) : tol_(tol) {}

  void insert(const Eigen::VectorXd& x, std::size_t id) { map_[key(cell(x))].push_back({x, id}); }

  std::optional<std::size_t> find(const Eigen::VectorXd& x) const {
    const auto c = cell(x);
    std::optional<std::size_t> best;
    std::vector<std::int64_t> probe(c.size());
    const int n = static_cast<int>(c.size());
    int combos = 1;
    for (int a = 0; a < n; ++a) combos *= 3;
    for (int k = 0; k < combos; ++k) {
      int r = k;
      for (int a = 0; a < n; ++a) {
        probe[a] = c[a] + (r % 3) - 1;
        r /= 3;
      }
      auto it = map_.find(key(probe));
      if (it == map_.end()) continue;
      for (const auto& [y, id] : it->second)
        if ((y - x).lpNorm<Eigen::Infinity>() <= tol_ && (!best || id < *best)) best = id;
    }
    return best;
  }

 private:
  std::vector<std::int64_t> cell(const Eigen::VectorXd& x) const {
    std::vector<std::int64_t> c(x.size());
    for (Eigen::Index a = 0; a < x.size(); ++a) c[a] = static_cast<std::int64_t>(std::floor(x[a] / tol_));
    return c;
  }
  static std::uint64_t key(const std::vector<std::int64_t>& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : c) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
      h ^= h >> 29;
    }
    return h;
  }

  double tol_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<Eigen::VectorXd, std::size_t>>> map_;
};

std::string fmt_vec(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i ? "," : "", v[i]);
  return s + "]";
}

Eigen::VectorXd from_json_vec(const nlohmann::json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

Dataset::Dataset(double eps, Norm norm, std::string system_hash, int horizon)
    : eps_(eps), norm_(norm), system_hash_(std::move(system_hash)), horizon_(horizon) {}

bool Dataset::closed() const {
  for (const auto& t : items_) {
    if (t.step >= horizon_ - 1) continue;
    if (!t.succ || *t.succ >= items_.size()) return false;
  }
  return true;
}

std::size_t Dataset::append(Transition t) {
  if (!(t.j >= 0.0) || !std::isfinite(t.j)) throw NpmpcError("invalid_transition", "j must be finite and >= 0");
  if (t.traj_id >= next_traj_) next_traj_ = t.traj_id + 1;
  items_.push_back(std::move(t));
  return items_.size() - 1;
}

void Dataset::erase(std::size_t i) {
  if (i >= items_.size()) throw NpmpcError("out_of_range", "dataset index out of range");
  items_.erase(items_.begin() + static_cast<std::ptrdiff_t>(i));
  for (auto& t : items_) {
    if (!t.succ) continue;
    if (*t.succ == i) t.succ.reset();
    else if (*t.succ > i) --*t.succ;
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  if (a.eps_ != b.eps_ || !(a.norm_ == b.norm_) || a.system_hash_ != b.system_hash_ ||
      a.horizon_ != b.horizon_ || a.items_.size() != b.items_.size())
    return false;
  for (std::size_t i = 0; i < a.items_.size(); ++i) {
    const auto &p = a.items_[i], &q = b.items_[i];
    if (p.x != q.x || p.u != q.u || p.j != q.j || p.succ != q.succ || p.traj_id != q.traj_id || p.step != q.step)
      return false;
  }
  return true;
}

std::size_t ingest_trajectory(Dataset& ds, const System& sys, const SolveResult& r) {
  if (r.status == SolveStatus::Infeasible || !r.cost.finite())
    throw NpmpcError("infeasible_result", "cannot ingest an infeasible solve");
  const int H = static_cast<int>(r.controls.size());
  if (H != ds.horizon())
    throw NpmpcError("horizon_mismatch", fmt::format("dataset horizon {} but trajectory has {} steps", ds.horizon(), H));
  // Re-check instead of trusting the solver.
  const Cost check = trajectory_cost(sys, r.states.front(), r.controls, ds.eps());
  if (!check.finite()) throw NpmpcError("constraint_violation", "trajectory leaves the eroded state set");
  const auto xs = simulate(sys, r.states.front(), r.controls);

  std::vector<double> j(H + 1);
  j[H] = sys.terminal_cost(xs[H]).value();
  for (int t = H - 1; t >= 0; --t) j[t] = sys.stage_cost(xs[t], r.controls[t]) + sys.gamma() * j[t + 1];

  const int id = ds.new_trajectory_id();
  const std::size_t first = ds.size();
  for (int t = 0; t < H; ++t) {
    Transition tr;
    tr.x = xs[t];
    tr.u = r.controls[t];
    tr.j = j[t];
    if (t + 1 < H) tr.succ = first + static_cast<std::size_t>(t) + 1;
    tr.traj_id = id;
    tr.step = t;
    ds.append(std::move(tr));
  }
  return first;
}

bool check_closure(const Dataset& ds) { return ds.closed(); }

bool check_closure(const Dataset& ds, const System& sys, double tol) {
  PointIndex idx(tol);
  for (std::size_t i = 0; i < ds.size(); ++i) idx.insert(ds[i].x, i);
  for (const auto& t : ds.transitions()) {
    if (t.step >= ds.horizon() - 1) continue;
    if (!idx.find(sys.dynamics(t.x, t.u))) return false;
  }
  return true;
}

Dataset deduplicate(const Dataset& ds, double tol) {
  PointIndex idx(tol);
  std::vector<std::size_t> survivor_of(ds.size());
  std::vector<std::size_t> kept;  // survivor slot -> chosen source index
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (auto s = idx.find(ds[i].x)) {
      const std::size_t slot = survivor_of[*s];
      survivor_of[i] = slot;
      if (ds[i].j < ds[kept[slot]].j) kept[slot] = i;
    } else {
      survivor_of[i] = kept.size();
      kept.push_back(i);
      idx.insert(ds[i].x, i);
    }
  }
  Dataset out(ds.eps(), ds.norm(), ds.system_hash(), ds.horizon());
  for (std::size_t slot = 0; slot < kept.size(); ++slot) {
    Transition t = ds[kept[slot]];
    if (t.succ) t.succ = survivor_of[*t.succ];
    out.append(std::move(t));
  }
  return out;
}

Dataset heads_only(const Dataset& ds) {
  Dataset out(ds.eps(), ds.norm(), ds.system_hash(), ds.horizon());
  for (const auto& t : ds.transitions()) {
    if (t.step != 0) continue;
    Transition h = t;
    h.succ.reset();
    out.append(std::move(h));
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw NpmpcError("io_error", "cannot write dataset '" + path + "'");
  out << fmt::format(R"({{"format":"npmpc-ds","version":1,"eps":{:.17g},"norm":{},"system_hash":{},"count":{},"horizon":{}}})",
                     ds.eps(), nlohmann::json(ds.norm().name()).dump(), nlohmann::json(ds.system_hash()).dump(),
                     ds.size(), ds.horizon())
      << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& t = ds[i];
    out << fmt::format(R"({{"i":{},"x":{},"u":{},"j":{:.17g},"succ":{},"traj":{},"step":{}}})", i, fmt_vec(t.x),
                       fmt_vec(t.u), t.j, t.succ ? std::to_string(*t.succ) : "null", t.traj_id, t.step)
        << '\n';
  }
  if (!out) throw NpmpcError("io_error", "failed writing dataset '" + path + "'");
}

Dataset load_dataset(const std::string& path, const std::string& expected_hash, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw NpmpcError("io_error", "cannot open dataset '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw NpmpcError("format_error", "dataset '" + path + "' is empty");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw NpmpcError("format_error", fmt::format("bad dataset header: {}", e.what()));
  }
  if (hdr.value("format", "") != "npmpc-ds") throw NpmpcError("format_error", "not an npmpc dataset");
  if (hdr.value("version", 0) != 1)
    throw NpmpcError("version_mismatch", fmt::format("unsupported dataset version {}", hdr.value("version", 0)));
  Dataset ds(hdr.at("eps").get<double>(), Norm::parse(hdr.at("norm").get<std::string>()),
             hdr.at("system_hash").get<std::string>(), hdr.value("horizon", 0));
  if (!expected_hash.empty() && expected_hash != ds.system_hash() && warnings)
    warnings->push_back(fmt::format("system digest mismatch: dataset {} vs system {}", ds.system_hash(), expected_hash));
  const std::size_t count = hdr.at("count").get<std::size_t>();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("i").get<std::size_t>() != ds.size())
        throw NpmpcError("format_error", fmt::format("line {}: entries out of order", lineno));
      Transition t;
      t.x = from_json_vec(j.at("x"));
      t.u = from_json_vec(j.at("u"));
      t.j = j.at("j").get<double>();
      if (!j.at("succ").is_null()) t.succ = j.at("succ").get<std::size_t>();
      t.traj_id = j.at("traj").get<int>();
      t.step = j.at("step").get<int>();
      ds.append(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw NpmpcError("format_error", fmt::format("line {}: {}", lineno, e.what()));
    }
  }
  if (ds.size() != count)
    throw NpmpcError("format_error", fmt::format("header count {} but {} entries", count, ds.size()));
  return ds;
}

}  // namespace npmpc
