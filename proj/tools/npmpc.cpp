// npmpc: collect / verify / bench / oracle / certify / selftest.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <json.hpp>

#include "npmpc/acceptance.hpp"
#include "npmpc/certify.hpp"
#include "npmpc/collector.hpp"
#include "npmpc/dp_oracle.hpp"
#include "npmpc/evaluator.hpp"
#include "npmpc/verifier.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace npmpc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNegative = 2;
constexpr int kExitUsage = 64;
constexpr const char* kVersion = "0.1.0";

struct Run {
  std::string command;
  std::vector<std::string> argv;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  std::time_t started = std::time(nullptr);
};

std::string iso_time(std::time_t t) {
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Manifest with what is needed to re-run the command.
void write_manifest(const Run& run, const fs::path& dir, const json& extra) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  json m = extra;
  m["command"] = run.command;
  m["argv"] = run.argv;
  m["started_at"] = iso_time(run.started);
  m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - run.t0).count();
  m["versions"] = {{"npmpc", kVersion},
                   {"compiler", fmt::format("gcc {}.{}.{}", __GNUC__, __GNUC_MINOR__, __GNUC_PATCHLEVEL__)},
                   {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)}};
  std::ofstream(dir / (run.command + ".manifest.json")) << m.dump(2) << "\n";
}

fs::path parent_dir(const std::string& file) {
  if (file.empty()) return {};
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

void write_json(const std::string& path, const json& j) {
  if (path.empty()) return;
  if (const auto d = parent_dir(path); !d.empty()) fs::create_directories(d);
  std::ofstream out(path);
  if (!out) throw NpmpcError("io_error", "cannot write " + path);
  out << j.dump(2) << "\n";
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

// --oracle-cache wins over NPMPC_ORACLE_CACHE (a directory).
std::string oracle_cache_path(const std::string& flag, const System& sys, double eps, int grid, int cgrid) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("NPMPC_ORACLE_CACHE");
  if (!env || !*env) return {};
  fs::create_directories(env);
  const std::string name = sys.builtin().empty() ? sys.name() : sys.builtin();
  return (fs::path(env) / fmt::format("{}_{}_eps{}_g{}_c{}.npdp", name, sys.hash(), eps, grid, cgrid)).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonparametric MPC policies: data collection, certification and benchmarks"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Run run;
  for (int i = 0; i < argc; ++i) run.argv.emplace_back(argv[i]);

  int jobs = 0;
  app.add_option("--jobs,-j", jobs, "Worker threads (0: all cores)")->capture_default_str();

  // collect
  auto* c_collect = app.add_subcommand("collect", "Solve from uniform or grid initial states and store trajectories");
  std::string c_system = "clqr", c_out = "dataset.jsonl", c_report;
  double c_eps = 0.0;
  int c_n = 100, c_grid = 0;
  std::uint64_t c_seed = 0;
  std::optional<double> c_beta, c_eta, c_delta, c_lambda;
  c_collect->add_option("--system", c_system, "Builtin name or JSON config")->capture_default_str();
  c_collect->add_option("--eps", c_eps, "Erosion level")->capture_default_str();
  c_collect->add_option("--n", c_n, "Number of uniform draws")->capture_default_str();
  c_collect->add_option("--grid", c_grid, "Use a g^n grid instead of uniform draws");
  c_collect->add_option("--seed", c_seed)->capture_default_str();
  c_collect->add_option("--beta", c_beta);
  c_collect->add_option("--eta", c_eta);
  c_collect->add_option("--delta", c_delta);
  c_collect->add_option("--lambda", c_lambda);
  c_collect->add_option("--out", c_out, "Dataset path (JSON lines)")->capture_default_str();
  c_collect->add_option("--report", c_report, "Report JSON path (default: <out>.report.json)");

  // verify
  auto* c_verify = app.add_subcommand("verify", "Adaptive cell-splitting certification");
  std::string v_system = "clqr", v_dump, v_ds, v_report;
  VerifyOptions vo;
  double v_eps = 0.1;
  c_verify->add_option("--system", v_system)->capture_default_str();
  c_verify->add_option("--eps", v_eps)->capture_default_str();
  c_verify->add_option("--h0", vo.h0)->capture_default_str();
  c_verify->add_option("--beta", vo.beta)->capture_default_str();
  c_verify->add_option("--eta", vo.eta)->capture_default_str();
  c_verify->add_option("--lambda", vo.lambda)->capture_default_str();
  c_verify->add_option("--budget", vo.budget)->capture_default_str();
  c_verify->add_option("--dump-cells", v_dump, "Per-iteration cell dump, {t} = iteration");
  c_verify->add_option("--out-ds", v_ds, "Write the assembled dataset");
  c_verify->add_option("--report", v_report, "Report JSON path");

  // bench
  auto* c_bench = app.add_subcommand("bench", "Latency / optimality trade-off study");
  std::string b_system = "pendulum", b_grids = "3,5,7,9,11", b_horizons = "5,10,20,50", b_out = "results",
              b_cache;
  TradeoffOptions to;
  std::optional<double> b_lambda;
  c_bench->add_option("--system", b_system)->capture_default_str();
  c_bench->add_option("--grids", b_grids)->capture_default_str();
  c_bench->add_option("--horizons", b_horizons)->capture_default_str();
  c_bench->add_option("--m", to.M)->capture_default_str();
  c_bench->add_option("--seed", to.seed)->capture_default_str();
  c_bench->add_option("--eps", to.eps)->capture_default_str();
  c_bench->add_option("--eta", to.eta)->capture_default_str();
  c_bench->add_option("--lambda", b_lambda);
  c_bench->add_option("--baseline", to.baseline, "auto, dp or mpc")->capture_default_str();
  c_bench->add_option("--oracle-grid", to.dp_grid)->capture_default_str();
  c_bench->add_option("--oracle-cache", b_cache);
  c_bench->add_option("--warmup", to.warmup)->capture_default_str();
  c_bench->add_option("--out", b_out)->capture_default_str();

  // oracle
  auto* c_oracle = app.add_subcommand("oracle", "Build (or load) the gridded DP oracle and query it");
  std::string o_system = "clqr", o_out, o_query;
  double o_eps = 0.0;
  int o_grid = 201, o_cgrid = 101;
  c_oracle->add_option("--system", o_system)->capture_default_str();
  c_oracle->add_option("--eps", o_eps)->capture_default_str();
  c_oracle->add_option("--grid", o_grid)->capture_default_str();
  c_oracle->add_option("--control-grid", o_cgrid)->capture_default_str();
  c_oracle->add_option("--oracle-cache,--out", o_out, "Oracle file to reuse or create");
  c_oracle->add_option("--query", o_query, "Comma-separated state");

  // certify
  auto* c_certify = app.add_subcommand("certify", "Check a dataset's certificates");
  std::string k_ds, k_system, k_kind = "all", k_report;
  double k_beta = 5.0, k_eta = 0.01;
  std::optional<double> k_lambda;
  c_certify->add_option("--ds", k_ds, "Dataset path")->required();
  c_certify->add_option("--system", k_system, "Builtin name or JSON config (needed for recursive feasibility)");
  c_certify->add_option("--kind", k_kind, "recursive_feasibility, coverage or all")->capture_default_str();
  c_certify->add_option("--beta", k_beta)->capture_default_str();
  c_certify->add_option("--eta", k_eta)->capture_default_str();
  c_certify->add_option("--lambda", k_lambda);
  c_certify->add_option("--report", k_report);

  // selftest
  auto* c_self = app.add_subcommand("selftest", "Run the acceptance criteria");
  AcceptanceOptions ao;
  c_self->add_option("--rollouts", ao.rollouts)->capture_default_str();
  c_self->add_option("--oracle-grid", ao.oracle_grid)->capture_default_str();
  c_self->add_option("--seed", ao.seed)->capture_default_str();
  c_self->add_option("--oracle-cache", ao.oracle_cache_dir, "Directory for cached oracles");
  c_self->add_flag("--verbose,-v", ao.verbose);

  if (argc <= 1) {
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_collect) {
      run.command = "collect";
      const System sys = resolve_system(c_system);
      CollectOptions co;
      co.jobs = jobs;
      co.beta = c_beta;
      co.eta = c_eta;
      co.delta = c_delta;
      co.lambda = c_lambda;
      const auto res = c_grid > 0 ? collect_grid(sys, c_eps, c_grid, co) : collect(sys, c_eps, c_n, c_seed, co);
      if (const auto d = parent_dir(c_out); !d.empty()) fs::create_directories(d);
      save_dataset(res.ds, c_out);
      const json rep = res.report.to_json();
      write_json(c_report.empty() ? c_out + ".report.json" : c_report, rep);
      std::cout << rep.dump(2) << "\n";
      write_manifest(run, parent_dir(c_out),
                     {{"system", sys.to_json()}, {"config_digest", sys.hash()}, {"seed", c_seed}, {"eps", c_eps}});
      return kExitOk;
    }
    if (*c_verify) {
      run.command = "verify";
      const System sys = resolve_system(v_system);
      vo.jobs = jobs;
      vo.dump_pattern = v_dump;
      if (const auto d = parent_dir(v_dump); !d.empty()) fs::create_directories(d);
      const auto res = verify(sys, v_eps, vo);
      const json rep = res.report.to_json(res.tree);
      write_json(v_report, rep);
      if (!v_ds.empty()) {
        if (const auto d = parent_dir(v_ds); !d.empty()) fs::create_directories(d);
        save_dataset(res.ds, v_ds);
      }
      std::cout << rep.dump(2) << "\n";
      fs::path mdir = parent_dir(v_report);
      if (mdir.empty()) mdir = parent_dir(v_dump);
      if (mdir.empty()) mdir = parent_dir(v_ds);
      write_manifest(run, mdir,
                     {{"system", sys.to_json()},
                      {"config_digest", sys.hash()},
                      {"seed", nullptr},
                      {"eps", v_eps},
                      {"h0", vo.h0},
                      {"beta", vo.beta},
                      {"eta", vo.eta},
                      {"lambda", vo.lambda},
                      {"budget", vo.budget}});
      return res.report.fully_certified ? kExitOk : kExitNegative;
    }
    if (*c_bench) {
      run.command = "bench";
      const System sys = resolve_system(b_system);
      to.grids = parse_ints(b_grids);
      to.horizons = parse_ints(b_horizons);
      to.jobs = jobs;
      to.lambda = b_lambda;
      to.dp_control_grid = std::max(to.dp_control_grid, 2);
      if (to.baseline != "mpc" && sys.n() <= 3 && !sys.terminal_tol())
        to.oracle_cache = oracle_cache_path(b_cache, sys, to.eps, to.dp_grid, to.dp_control_grid);
      const auto res = tradeoff_study(sys, to);
      fs::create_directories(b_out);
      res.write_csv((fs::path(b_out) / "results.csv").string());
      const json summary = res.to_json();
      write_json((fs::path(b_out) / "summary.json").string(), summary);
      for (const auto& row : res.rows)
        std::cout << fmt::format("{:>10}  latency p50 {:>12.0f} ns  gap p25/p50/p75 {:.4f}/{:.4f}/{:.4f}  violations {}\n",
                                 row.controller, row.latency_p50, row.gap_p25, row.gap_p50, row.gap_p75,
                                 row.violations);
      write_manifest(run, b_out,
                     {{"system", sys.to_json()},
                      {"config_digest", sys.hash()},
                      {"seed", to.seed},
                      {"grids", to.grids},
                      {"horizons", to.horizons},
                      {"M", to.M},
                      {"eps", to.eps}});
      return kExitOk;
    }
    if (*c_oracle) {
      run.command = "oracle";
      const System sys = resolve_system(o_system);
      DPOptions d;
      d.state_grid.assign(sys.n(), o_grid);
      d.control_grid.assign(sys.m(), o_cgrid);
      d.jobs = jobs;
      const std::string path = oracle_cache_path(o_out, sys, o_eps, o_grid, o_cgrid);
      const DPOracle o = path.empty() ? dp_build(sys, o_eps, d) : dp_build_cached(sys, o_eps, d, path);
      json out = {{"system", sys.name()}, {"eps", o_eps}, {"nodes", o.nodes()}, {"file", path}};
      if (!o_query.empty()) {
        const auto q = parse_doubles(o_query);
        if (static_cast<int>(q.size()) != sys.n()) throw NpmpcError("dimension_mismatch", "query has the wrong size");
        const State x = Eigen::Map<const Eigen::VectorXd>(q.data(), sys.n());
        const Cost J = dp_query(o, x);
        out["query"] = q;
        out["J"] = J.finite() ? json(J.value()) : json("infeasible");
      }
      std::cout << out.dump(2) << "\n";
      write_manifest(run, parent_dir(path), {{"system", sys.to_json()}, {"config_digest", sys.hash()}, {"seed", nullptr}});
      return kExitOk;
    }
    if (*c_certify) {
      run.command = "certify";
      std::vector<std::string> warnings;
      std::optional<System> sys;
      if (!k_system.empty()) sys = resolve_system(k_system);
      const Dataset ds = load_dataset(k_ds, sys ? sys->hash() : "", &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      json rep = json::object();
      bool holds = !ds.empty();
      if (ds.empty()) rep["error"] = "empty_dataset";
      if (!ds.empty() && (k_kind == "recursive_feasibility" || k_kind == "all")) {
        if (!sys) throw NpmpcError("precondition", "--system is required for recursive feasibility");
        const auto c = check_recursive_feasibility(ds, *sys, CoverOptions{1e-9});
        rep["recursive_feasibility"] = c.to_json();
        holds = holds && c.holds;
      }
      if (!ds.empty() && (k_kind == "coverage" || k_kind == "all")) {
        double lambda = 0.0;
        if (k_lambda) lambda = *k_lambda;
        else if (sys && sys->gamma() * sys->lipschitz().L_f < 1) lambda = lambda_min(*sys);
        else throw NpmpcError("precondition", "--lambda is required when lambda_min is unavailable");
        Box X;
        if (sys) {
          X = sys->X();
        } else {
          Eigen::VectorXd lo = ds[0].x, hi = ds[0].x;
          for (const auto& t : ds.transitions()) {
            lo = lo.cwiseMin(t.x);
            hi = hi.cwiseMax(t.x);
          }
          X = Box(lo, hi);
        }
        const auto c = check_theorem2_coverage(ds, lambda, k_beta, k_eta, X, CoverOptions{1e-9});
        rep["coverage"] = c.to_json();
        holds = holds && c.holds;
      }
      if (k_kind != "all" && k_kind != "coverage" && k_kind != "recursive_feasibility")
        throw NpmpcError("precondition", "unknown --kind " + k_kind);
      rep["holds"] = holds;
      write_json(k_report, rep);
      std::cout << rep.dump(2) << "\n";
      write_manifest(run, parent_dir(k_report), {{"dataset", k_ds}, {"config_digest", ds.system_hash()}, {"seed", nullptr}});
      return holds ? kExitOk : kExitNegative;
    }
    if (*c_self) {
      run.command = "selftest";
      ao.jobs = jobs;
      bool all = true;
      run_acceptance(ao, [&](const CriterionResult& r) {
        all = all && r.pass;
        std::cout << format_result(r) << std::endl;
      });
      return all ? kExitOk : kExitError;
    }
  } catch (const NpmpcError& e) {
    std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  std::cerr << app.help();
  return kExitUsage;
}
