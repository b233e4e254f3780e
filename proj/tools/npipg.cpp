// npipg: solve problem files and run the benchmark families.
//
// Exit codes: 0 success, 2 input error, 3 non-convergence.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "npipg/io_json.hpp"
#include "npipg/oracle/kkt.hpp"
#include "npipg/problem_gen.hpp"
#include "npipg/solver.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNoConvergence = 3;

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void write_trace(const std::string& path, const npipg::SolveReport& rep) {
  std::ofstream out(path);
  if (!out) throw npipg::io::InputError("cannot write " + path);
  out << "iter,step,residual,elapsed_ms\n";
  out << std::setprecision(17);
  for (const auto& r : rep.trace) {
    out << r.iter << ',' << npipg::to_string(r.kind) << ',' << r.residual << ',' << r.elapsed_ms
        << '\n';
  }
}

/// Output stream for --out PATH, stdout otherwise.
class OutputSink {
 public:
  explicit OutputSink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw npipg::io::InputError("cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

struct SolveArgs {
  std::string file;
  double eps_abs = 1e-8;
  double eps_rel = 0.0;
  long max_iters = 1'000'000;
  bool pure_pipg = false;
  bool no_equilibrate = false;
  std::string trace;
  std::string solution;
};

int cmd_solve(const SolveArgs& a) {
  const npipg::QpProblem p = npipg::io::load_problem(a.file);
  npipg::SolverConfig cfg;
  cfg.eps_abs = a.eps_abs;
  cfg.eps_rel = a.eps_rel;
  cfg.max_iters = a.max_iters;
  cfg.use_newton = !a.pure_pipg;
  cfg.equilibrate = !a.no_equilibrate;
  const npipg::SolveReport rep = npipg::solve(p, cfg);

  std::cout << "status: " << npipg::to_string(rep.status) << '\n'
            << "iterations: " << rep.iterations << '\n'
            << "pipg_steps: " << rep.pipg_count << '\n'
            << "newton_accepted: " << rep.newton_accept_count << '\n'
            << "newton_rejected: " << rep.newton_reject_count << '\n'
            << "final_residual: " << sci(rep.final_residual) << '\n'
            << "objective: " << fmt(p.objective(rep.z), 12) << '\n'
            << "solve_ms: " << fmt(rep.solve_ms, 4) << '\n';

  if (!a.trace.empty()) write_trace(a.trace, rep);
  if (!a.solution.empty()) {
    const auto kkt = npipg::oracle::kkt_distances(p, rep.z, rep.w);
    nlohmann::json j;
    j["z"] = std::vector<double>(rep.z.data(), rep.z.data() + rep.z.size());
    j["w"] = std::vector<double>(rep.w.data(), rep.w.data() + rep.w.size());
    j["kkt"] = {{"primal", kkt.primal}, {"dual", kkt.dual}};
    std::ofstream out(a.solution);
    if (!out) throw npipg::io::InputError("cannot write " + a.solution);
    out << j.dump(2) << '\n';
  }
  return rep.status == npipg::SolveStatus::Converged ? kExitOk : kExitNoConvergence;
}

struct OscBenchArgs {
  int horizon = 20;
  int masses = 8;
  double umax = 1.0;
  int trials = 10;
  std::uint64_t seed = 0;
  double eps_abs = 1e-8;
  long max_iters = 200'000;
  bool timing = false;
  std::string out;
};

int cmd_bench_oscmass(const OscBenchArgs& a) {
  OutputSink sink(a.out);
  std::ostream& os = sink.stream();
  os << "trial,seed,status,pipg_iters,npipg_iters,npipg_newton_steps,npipg_newton_accepted,agreement";
  if (a.timing) os << ",pipg_ms,npipg_ms";
  os << '\n';

  npipg::SolverConfig cfg;
  cfg.eps_abs = a.eps_abs;
  cfg.max_iters = a.max_iters;
  cfg.record_trace = false;

  std::vector<double> pipg_iters, npipg_iters, newton_steps, accepted, agreement, pipg_ms, npipg_ms;
  int feasible = 0;
  bool any_maxiters = false;
  for (int t = 0; t < a.trials; ++t) {
    npipg::OscMassConfig oc;
    oc.n_masses = a.masses;
    oc.horizon = a.horizon;
    oc.u_bound = a.umax;
    oc.seed = a.seed + static_cast<std::uint64_t>(t);
    const npipg::QpProblem p = npipg::gen_oscillating_masses(oc);

    npipg::SolverConfig pure = cfg;
    pure.use_newton = false;
    const npipg::SolveReport rp = npipg::solve(p, pure);
    os << t << ',' << oc.seed << ',';
    if (rp.status != npipg::SolveStatus::Converged) {
      os << "presumed-infeasible," << rp.iterations << ",,,,";
      if (a.timing) os << ',' << fmt(rp.solve_ms, 4) << ',';
      os << '\n';
      continue;
    }
    const npipg::SolveReport rn = npipg::solve(p, cfg);
    const bool ok = rn.status == npipg::SolveStatus::Converged;
    any_maxiters = any_maxiters || !ok;
    const double agree = (rn.z - rp.z).norm();
    os << (ok ? "converged" : "npipg-maxiters") << ',' << rp.iterations << ',' << rn.iterations << ','
       << rn.newton_attempts() << ',' << rn.newton_accept_count << ',' << sci(agree);
    if (a.timing) os << ',' << fmt(rp.solve_ms, 4) << ',' << fmt(rn.solve_ms, 4);
    os << '\n';
    if (!ok) continue;
    ++feasible;
    pipg_iters.push_back(static_cast<double>(rp.iterations));
    npipg_iters.push_back(static_cast<double>(rn.iterations));
    newton_steps.push_back(static_cast<double>(rn.newton_attempts()));
    accepted.push_back(static_cast<double>(rn.newton_accept_count));
    agreement.push_back(agree);
    pipg_ms.push_back(rp.solve_ms);
    npipg_ms.push_back(rn.solve_ms);
  }
  const std::string status = "feasible=" + std::to_string(feasible) + "/" + std::to_string(a.trials);
  const auto aggregate = [&](const char* name, auto&& f) {
    os << name << ",," << status << ',' << fmt(f(pipg_iters), 8) << ',' << fmt(f(npipg_iters), 8)
       << ',' << fmt(f(newton_steps), 6) << ',' << fmt(f(accepted), 6) << ',' << sci(f(agreement));
    if (a.timing) os << ',' << fmt(f(pipg_ms), 4) << ',' << fmt(f(npipg_ms), 4);
    os << '\n';
  };
  aggregate("mean", mean);
  aggregate("median", median);
  return any_maxiters ? kExitNoConvergence : kExitOk;
}

struct PdgBenchArgs {
  int horizon = 30;
  std::string rinit;
  std::string sweep;
  std::string out;
  std::string trace_dir;
  bool compare_pipg = false;
  double eps_abs = 1e-12;
  long max_iters = 200'000;
};

std::vector<double> split_numbers(const std::string& s, char sep, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw npipg::io::InputError(std::string(what) + ": cannot parse \"" + item + "\"");
    }
  }
  return v;
}

int cmd_bench_pdg(const PdgBenchArgs& a) {
  std::vector<Eigen::Vector3d> points;
  const npipg::PdgConfig defaults;
  if (!a.sweep.empty()) {
    const auto s = split_numbers(a.sweep, ':', "--rinit-y-sweep");
    if (s.size() != 3 || !(s[1] > 0.0) || s[2] < s[0]) {
      throw npipg::io::InputError("--rinit-y-sweep expects A:STEP:B with STEP > 0 and B >= A");
    }
    const int count = static_cast<int>(std::floor((s[2] - s[0]) / s[1] + 1e-9)) + 1;
    for (int k = 0; k < count; ++k) {
      points.emplace_back(defaults.r_init[0], s[0] + k * s[1], defaults.r_init[2]);
    }
  } else if (!a.rinit.empty()) {
    const auto r = split_numbers(a.rinit, ',', "--rinit");
    if (r.size() != 3) throw npipg::io::InputError("--rinit expects X,Y,Z");
    points.emplace_back(r[0], r[1], r[2]);
  } else {
    points.push_back(defaults.r_init);
  }
  if (!a.trace_dir.empty()) std::filesystem::create_directories(a.trace_dir);

  OutputSink sink(a.out);
  std::ostream& os = sink.stream();
  os << "point,rinit_x,rinit_y,rinit_z,status,iters,newton_steps,newton_accepted,final_residual,ms";
  if (a.compare_pipg) os << ",pipg_status,pipg_iters,pipg_ms";
  os << '\n';

  npipg::SolverConfig cfg;
  cfg.eps_abs = a.eps_abs;
  cfg.max_iters = a.max_iters;
  cfg.record_trace = !a.trace_dir.empty();
  bool any_maxiters = false;
  for (std::size_t k = 0; k < points.size(); ++k) {
    npipg::PdgConfig pc;
    pc.horizon = a.horizon;
    pc.r_init = points[k];
    const npipg::QpProblem p = npipg::gen_pdg(pc);
    const npipg::SolveReport rep = npipg::solve(p, cfg);
    const bool ok = rep.status == npipg::SolveStatus::Converged;
    any_maxiters = any_maxiters || !ok;
    os << k << ',' << fmt(points[k][0]) << ',' << fmt(points[k][1]) << ',' << fmt(points[k][2]) << ','
       << (ok ? "converged" : "presumed-infeasible") << ',' << rep.iterations << ','
       << rep.newton_attempts() << ',' << rep.newton_accept_count << ',' << sci(rep.final_residual)
       << ',' << fmt(rep.solve_ms, 4);
    if (a.compare_pipg) {
      npipg::SolverConfig pure = cfg;
      pure.use_newton = false;
      pure.record_trace = false;
      const npipg::SolveReport rp = npipg::solve(p, pure);
      os << ',' << npipg::to_string(rp.status) << ',' << rp.iterations << ',' << fmt(rp.solve_ms, 4);
    }
    os << '\n';
    if (!a.trace_dir.empty()) {
      std::ostringstream name;
      name << "pdg_y" << std::setw(5) << std::setfill('0') << static_cast<long>(std::lround(points[k][1]))
           << ".csv";
      write_trace((std::filesystem::path(a.trace_dir) / name.str()).string(), rep);
    }
  }
  return any_maxiters ? kExitNoConvergence : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Newton-accelerated proportional-integral projected gradient QP solver"};
  app.require_subcommand(1);

  SolveArgs solve_args;
  auto* solve = app.add_subcommand("solve", "Solve a problem file");
  solve->add_option("file", solve_args.file, "Problem JSON")->required();
  solve->add_option("--eps-abs", solve_args.eps_abs, "Absolute tolerance");
  solve->add_option("--eps-rel", solve_args.eps_rel, "Relative tolerance");
  solve->add_option("--max-iters", solve_args.max_iters, "Iteration cap");
  solve->add_flag("--pure-pipg", solve_args.pure_pipg, "Disable Newton steps");
  solve->add_flag("--no-equilibrate", solve_args.no_equilibrate, "Iterate on the unscaled rows");
  solve->add_option("--trace", solve_args.trace, "Write the iteration trace CSV");
  solve->add_option("--solution", solve_args.solution, "Write z, w and KKT distances as JSON");

  auto* bench = app.add_subcommand("bench", "Run a benchmark family");
  bench->require_subcommand(1);
  OscBenchArgs osc;
  auto* oscmass = bench->add_subcommand("oscmass", "Oscillating masses, pure PIPG vs Newton-PIPG");
  oscmass->add_option("--n", osc.horizon, "Horizon N")->check(CLI::PositiveNumber);
  oscmass->add_option("--masses", osc.masses, "Number of masses")->check(CLI::Range(2, 1000));
  oscmass->add_option("--umax", osc.umax, "Input bound")->check(CLI::PositiveNumber);
  oscmass->add_option("--trials", osc.trials, "Number of trials")->check(CLI::NonNegativeNumber);
  oscmass->add_option("--seed", osc.seed, "Seed of trial 0; trial t uses seed + t");
  oscmass->add_option("--eps-abs", osc.eps_abs, "Absolute tolerance");
  oscmass->add_option("--max-iters", osc.max_iters, "Iteration cap per solve");
  oscmass->add_flag("--timing", osc.timing, "Append wall-time columns");
  oscmass->add_option("--out", osc.out, "CSV path (default stdout)");

  PdgBenchArgs pdg;
  auto* pdg_cmd = bench->add_subcommand("pdg", "Powered-descent guidance instances");
  pdg_cmd->add_option("--horizon", pdg.horizon, "Number of time points")->check(CLI::Range(2, 100000));
  auto* rinit = pdg_cmd->add_option("--rinit", pdg.rinit, "Initial position X,Y,Z in meters");
  pdg_cmd->add_option("--rinit-y-sweep", pdg.sweep, "Sweep the y coordinate A:STEP:B")->excludes(rinit);
  pdg_cmd->add_option("--out", pdg.out, "CSV path (default stdout)");
  pdg_cmd->add_option("--trace-dir", pdg.trace_dir, "Write one trace CSV per point");
  pdg_cmd->add_flag("--compare-pipg", pdg.compare_pipg, "Also run pure PIPG");
  pdg_cmd->add_option("--eps-abs", pdg.eps_abs, "Absolute tolerance");
  pdg_cmd->add_option("--max-iters", pdg.max_iters, "Iteration cap per solve");

  auto* gen = app.add_subcommand("gen", "Write a generated problem as JSON");
  gen->require_subcommand(1);
  npipg::OscMassConfig gen_osc;
  std::string gen_out;
  auto* gen_oscmass = gen->add_subcommand("oscmass", "Oscillating masses");
  gen_oscmass->add_option("--n", gen_osc.horizon, "Horizon N")->check(CLI::PositiveNumber);
  gen_oscmass->add_option("--masses", gen_osc.n_masses, "Number of masses")->check(CLI::Range(2, 1000));
  gen_oscmass->add_option("--umax", gen_osc.u_bound, "Input bound")->check(CLI::PositiveNumber);
  gen_oscmass->add_option("--seed", gen_osc.seed, "Seed");
  gen_oscmass->add_option("--out", gen_out, "JSON path (default stdout)");
  npipg::PdgConfig gen_pdg_cfg;
  std::string gen_rinit;
  auto* gen_pdg = gen->add_subcommand("pdg", "Powered-descent guidance");
  gen_pdg->add_option("--horizon", gen_pdg_cfg.horizon, "Number of time points")->check(CLI::Range(2, 100000));
  gen_pdg->add_option("--rinit", gen_rinit, "Initial position X,Y,Z in meters");
  gen_pdg->add_option("--out", gen_out, "JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (*solve) return cmd_solve(solve_args);
    if (*oscmass) return cmd_bench_oscmass(osc);
    if (*pdg_cmd) return cmd_bench_pdg(pdg);
    if (*gen) {
      npipg::QpProblem p;
      if (*gen_oscmass) {
        p = npipg::gen_oscillating_masses(gen_osc);
      } else {
        if (!gen_rinit.empty()) {
          const auto r = split_numbers(gen_rinit, ',', "--rinit");
          if (r.size() != 3) throw npipg::io::InputError("--rinit expects X,Y,Z");
          gen_pdg_cfg.r_init = Eigen::Vector3d(r[0], r[1], r[2]);
        }
        p = npipg::gen_pdg(gen_pdg_cfg);
      }
      OutputSink sink(gen_out);
      sink.stream() << std::setprecision(17) << npipg::io::problem_to_json(p).dump() << '\n';
      return kExitOk;
    }
  } catch (const npipg::io::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const npipg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}
