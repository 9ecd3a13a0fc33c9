#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <future>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modsel/matrix.hpp"
#include "modsel/metrics.hpp"
#include "modsel/sim.hpp"
#include "modsel/workload.hpp"

namespace modsel::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// "1-8,16,32" -> {1..8, 16, 32}
inline std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : detail::split_csv(text)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(detail::parse_number<int>(item, "--sizes"));
      continue;
    }
    const int lo = detail::parse_number<int>(detail::trim(item.substr(0, dash)), "--sizes");
    const int hi = detail::parse_number<int>(detail::trim(item.substr(dash + 1)), "--sizes");
    if (hi < lo) throw Error("--sizes: empty range '" + item + "'");
    for (int s = lo; s <= hi; ++s) out.push_back(s);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw Error("--sizes: no sizes given");
  return out;
}

inline std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : detail::split_csv(text)) out.push_back(detail::parse_number<double>(item, "--alphas"));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string describe_parts(const Strategy& s, const std::vector<std::string>& modalities) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.parts().size(); ++i) {
    if (i) out += ", ";
    out += "(" + detail::combo_key_from(modalities, s.parts()[i].combo) + " x" +
           std::to_string(s.parts()[i].batch) + ")";
  }
  return out + "]";
}

struct SimOptions {
  std::string profile;
  std::string matrix;
  std::string scenario;
  std::string trace;
  double qps = -1.0;
  double duration_s = 60.0;
  double min_qps = 5.0;
  double max_qps = 60.0;
  double size_mean = 1.0;
  double size_sd = 6.0;
  double deadline_ms = 1000.0;
  std::uint64_t seed = 0;
  double overhead_ms = 70.0;
  double discrepancy = 1.0;
  double jitter = 0.0;
  int watermark = 2;
  double window_ms = 4000.0;
  double feedback_weight = 0.2;
  int max_size = 64;
  std::string out_dir;
  std::string format = "csv";
};

inline void add_sim_options(CLI::App* cmd, SimOptions& o) {
  cmd->add_option("--profile", o.profile, "Profile file (JSON)")->required();
  cmd->add_option("--matrix", o.matrix, "Strategy matrix file; built on the fly when omitted");
  auto* scen = cmd->add_option("--scenario", o.scenario, "Scripted jobs: arrival_ms,size,accuracy_slo,deadline_ms");
  auto* tr = cmd->add_option("--trace", o.trace, "Arrival trace: epoch_seconds,count per line");
  auto* q = cmd->add_option("--qps", o.qps, "Constant request rate");
  scen->excludes(tr)->excludes(q);
  tr->excludes(q);
  cmd->add_option("--duration", o.duration_s, "Workload length in seconds")->capture_default_str();
  cmd->add_option("--min-qps", o.min_qps, "Trace mapping lower bound")->capture_default_str();
  cmd->add_option("--max-qps", o.max_qps, "Trace mapping upper bound")->capture_default_str();
  cmd->add_option("--size-mean", o.size_mean, "Job size normal mean")->capture_default_str();
  cmd->add_option("--size-sd", o.size_sd, "Job size normal sd")->capture_default_str();
  cmd->add_option("--deadline-ms", o.deadline_ms, "Deadline offset after arrival")->capture_default_str();
  cmd->add_option("--seed", o.seed, "RNG seed")->required();
  cmd->add_option("--overhead-ms", o.overhead_ms, "Optimizer overhead per scheduling pass")->capture_default_str();
  cmd->add_option("--discrepancy", o.discrepancy, "Actual / profiled latency, 0.2..2.5")->capture_default_str();
  cmd->add_option("--jitter", o.jitter, "Per-batch uniform noise around the discrepancy")->capture_default_str();
  cmd->add_option("--watermark", o.watermark, "Pending arrivals that trigger a scheduling pass")->capture_default_str();
  cmd->add_option("--window-ms", o.window_ms, "Metrics window")->capture_default_str();
  cmd->add_option("--feedback-weight", o.feedback_weight, "Latency feedback EWMA weight")->capture_default_str();
  cmd->add_option("--max-size", o.max_size, "Largest job size when building the matrix on the fly")->capture_default_str();
  cmd->add_option("--out", o.out_dir, "Output directory for metric exports");
  cmd->add_option("--format", o.format, "Export format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
}

struct Experiment {
  ModelProfile profile;
  StrategyMatrix matrix;
  std::vector<JobTemplate> jobs;
};

inline Experiment prepare(const SimOptions& o) {
  ModelProfile profile = load_profile(o.profile);
  std::vector<JobTemplate> jobs;
  if (!o.scenario.empty()) {
    jobs = load_scenario(o.scenario);
  } else {
    WorkloadSpec ws;
    ws.duration_s = o.duration_s;
    ws.min_qps = o.min_qps;
    ws.max_qps = o.max_qps;
    ws.size_mean = o.size_mean;
    ws.size_sd = o.size_sd;
    ws.deadline_offset_ms = o.deadline_ms;
    ws.seed = o.seed;
    if (!o.trace.empty()) {
      ws.kind = WorkloadKind::trace;
      ws.trace_counts = resample_per_second(load_trace(o.trace));
    } else {
      if (o.qps < 0) throw WorkloadError("need one of --scenario, --trace or --qps");
      ws.qps = o.qps;
    }
    jobs = generate_jobs(ws, profile);
  }
  StrategyMatrix matrix;
  if (!o.matrix.empty()) {
    matrix = load_matrix(o.matrix, &profile);
  } else {
    int largest = o.max_size;
    for (const auto& j : jobs) largest = std::max(largest, j.size);
    matrix = build_matrix(profile, size_range(1, largest), default_alpha_grid(profile));
  }
  return {std::move(profile), std::move(matrix), std::move(jobs)};
}

inline SimConfig make_config(const Experiment& e, const SimOptions& o, Policy policy) {
  SimConfig cfg{e.profile, e.matrix, policy};
  cfg.optimizer_overhead = from_ms(o.overhead_ms);
  cfg.discrepancy = o.discrepancy;
  cfg.discrepancy_jitter = o.jitter;
  cfg.watermark = o.watermark;
  cfg.window = from_ms(o.window_ms);
  cfg.seed = o.seed;
  cfg.feedback_weight = o.feedback_weight;
  return cfg;
}

inline std::string ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  return (std::filesystem::path(dir) / "").string();
}

inline void print_report(std::ostream& out, Policy policy, const MetricsLog& log) {
  const auto r = run_summary(log);
  out << "policy " << to_string(policy) << ": " << r.jobs << " jobs, " << r.requests << " requests, "
      << log.events_processed << " events\n";
  out << "  completed " << r.completed << ", late " << r.late << ", dropped " << r.dropped
      << ", violations " << r.violated_requests << " requests (ratio " << fixed(r.violation_ratio) << ")\n";
  if (r.jobs > 0) {
    out << "  throughput per " << format_number(to_ms(log.window)) << " ms window: mean "
        << fixed(r.throughput.mean, 2) << ", median " << fixed(r.throughput.median, 2) << "\n";
    out << "  mean accuracy " << fixed(r.mean_accuracy) << ", mean jct " << fixed(r.mean_jct_ms, 2)
        << " ms\n";
  }
  if (r.jobs <= 20) {
    for (const auto& j : log.jobs) {
      out << "  job " << j.id << " " << to_string(j.outcome) << " at " << format_number(to_ms(j.end))
          << " ms";
      if (j.accuracy) out << ", accuracy " << format_number(*j.accuracy);
      out << "\n";
    }
  }
}

inline int cmd_profile_validate(const std::string& path, std::ostream& out) {
  const auto p = load_profile(path);
  out << "ok: " << p.name() << " (" << p.n_modalities() << " modalities, max_batch " << p.max_batch()
      << ", " << p.combo_count() << " combos)\n";
  return kExitOk;
}

inline int cmd_simulate(const SimOptions& o, const std::string& policy_name, std::ostream& out) {
  const Policy policy = parse_policy(policy_name);
  const Experiment e = prepare(o);
  const MetricsLog log = simulate(make_config(e, o, policy), e.jobs);
  print_report(out, policy, log);
  if (!o.out_dir.empty()) {
    const auto prefix = ensure_dir(o.out_dir);
    for (const auto& f : export_metrics(log, prefix, o.format == "csv" ? ExportFormat::csv : ExportFormat::json)) {
      out << "wrote " << f << "\n";
    }
  }
  return kExitOk;
}

inline int cmd_compare(const SimOptions& o, const std::vector<std::string>& policy_names,
                       std::ostream& out) {
  std::vector<Policy> policies;
  for (const auto& n : policy_names) policies.push_back(parse_policy(n));
  const Experiment e = prepare(o);  // one job stream shared by every policy
  std::vector<std::future<MetricsLog>> runs;
  for (const Policy p : policies) {
    runs.push_back(std::async(std::launch::async, [&e, &o, p] { return simulate(make_config(e, o, p), e.jobs); }));
  }
  std::vector<MetricsLog> logs;
  for (auto& f : runs) logs.push_back(f.get());

  std::string table = "policy,throughput_mean,throughput_median,violation_ratio,window_violation_mean,"
                      "mean_accuracy,completed,late,dropped\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %10s %10s %10s %10s %9s %7s %7s\n", "policy", "thr_mean",
                "thr_median", "viol", "accuracy", "completed", "late", "dropped");
  out << line;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto r = run_summary(logs[i]);
    std::snprintf(line, sizeof line, "%-11s %10.2f %10.2f %10.4f %10.4f %9zu %7zu %7zu\n",
                  std::string(to_string(policies[i])).c_str(), r.throughput.mean, r.throughput.median,
                  r.violation_ratio, r.mean_accuracy, r.completed, r.late, r.dropped);
    out << line;
    table += std::string(to_string(policies[i])) + "," + format_number(r.throughput.mean) + "," +
             format_number(r.throughput.median) + "," + format_number(r.violation_ratio) + "," +
             format_number(r.window_violation.mean) + "," + format_number(r.mean_accuracy) + "," +
             std::to_string(r.completed) + "," + std::to_string(r.late) + "," +
             std::to_string(r.dropped) + "\n";
  }
  if (!o.out_dir.empty()) {
    const auto prefix = ensure_dir(o.out_dir);
    detail::write_file(prefix + "compare.csv", table);
    out << "wrote " << prefix << "compare.csv\n";
    for (std::size_t i = 0; i < policies.size(); ++i) {
      const auto sub = ensure_dir(prefix + std::string(to_string(policies[i])));
      export_metrics(logs[i], sub, o.format == "csv" ? ExportFormat::csv : ExportFormat::json);
    }
  }
  return kExitOk;
}

/// Entry point. `args` excludes the program name. Exit codes: 0 success,
/// 1 invalid input or configuration, 2 runtime failure.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Modality-aware inference scheduler: offline strategy matrices and serving simulation",
               "modsel"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");
  app.require_subcommand(1);

  int code = kExitOk;

  // profile
  auto* profile = app.add_subcommand("profile", "Validate or generate model profiles");
  profile->require_subcommand(1);
  std::string validate_path;
  auto* pv = profile->add_subcommand("validate", "Check a profile file");
  pv->add_option("path", validate_path, "Profile file")->required();
  pv->callback([&] { code = cmd_profile_validate(validate_path, out); });

  GeneratorSpec gen;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* ps = profile->add_subcommand("synth", "Write a synthetic profile");
  ps->add_option("--modalities", gen.n_modalities, "Number of modalities")->required();
  ps->add_option("--max-batch", gen.max_batch, "Largest batch size")->required();
  ps->add_option("--seed", synth_seed, "RNG seed")->required();
  ps->add_option("--out", synth_out, "Output file")->required();
  ps->add_option("--name", gen.name, "Model name")->capture_default_str();
  ps->add_option("--latency-min-ms", gen.latency_min_ms)->capture_default_str();
  ps->add_option("--latency-max-ms", gen.latency_max_ms)->capture_default_str();
  ps->add_option("--accuracy-min", gen.accuracy_min)->capture_default_str();
  ps->add_option("--accuracy-max", gen.accuracy_max)->capture_default_str();
  ps->callback([&] {
    save_profile(synth_profile(gen, synth_seed), synth_out);
    out << "wrote " << synth_out << "\n";
  });

  std::string desk_out;
  auto* pf = profile->add_subcommand("desk", "Write the two-modality desk profile");
  pf->add_option("--out", desk_out, "Output file")->required();
  pf->callback([&] {
    save_profile(desk_profile(), desk_out);
    out << "wrote " << desk_out << "\n";
  });

  // matrix
  auto* matrix = app.add_subcommand("matrix", "Build or inspect strategy matrices");
  matrix->require_subcommand(1);
  std::string mb_profile, mb_out, mb_sizes = "1-64", mb_alphas;
  double mb_step = 0.01;
  auto* mb = matrix->add_subcommand("build", "Solve every (size, alpha) cell offline");
  mb->add_option("--profile", mb_profile, "Profile file")->required();
  mb->add_option("--sizes", mb_sizes, "Job sizes, e.g. 1-64 or 1,2,4,8")->capture_default_str();
  mb->add_option("--alphas", mb_alphas, "Accuracy levels, comma separated (default: grid)");
  mb->add_option("--alpha-step", mb_step, "Default grid step")->capture_default_str();
  mb->add_option("--out", mb_out, "Output file")->required();
  mb->callback([&] {
    const auto p = load_profile(mb_profile);
    const auto alphas = mb_alphas.empty() ? default_alpha_grid(p, mb_step) : parse_alphas(mb_alphas);
    const auto t0 = std::chrono::steady_clock::now();
    const auto m = build_matrix(p, parse_sizes(mb_sizes), alphas);
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    save_matrix(m, mb_out);
    out << "built " << m.sizes().size() << " x " << m.alphas().size() << " = " << m.cell_count()
        << " cells (" << m.feasible_count() << " feasible) in " << fixed(ms, 1) << " ms\n";
    if (m.feasible_count() < m.cell_count()) {
      err << "warning: " << (m.cell_count() - m.feasible_count()) << " of " << m.cell_count()
          << " cells are infeasible (alpha above " << fixed(from_accuracy_units(p.max_accuracy_units()))
          << ")\n";
    }
    out << "wrote " << mb_out << "\n";
  });

  std::string mi_path;
  int mi_size = 0;
  double mi_alpha = 0.0;
  auto* mi = matrix->add_subcommand("inspect", "Print one matrix cell");
  mi->add_option("path", mi_path, "Matrix file")->required();
  mi->add_option("--size", mi_size, "Job size")->required();
  mi->add_option("--alpha", mi_alpha, "Accuracy level")->required();
  mi->callback([&] {
    const auto m = load_matrix(mi_path);
    const auto& c = m.cell(mi_size, mi_alpha);
    out << "size " << mi_size << " alpha " << format_number(mi_alpha) << ": ";
    if (!c) {
      out << "infeasible\n";
      return;
    }
    out << "latency " << format_number(to_ms(c->latency)) << " ms, accuracy "
        << format_number(c->accuracy()) << ", strategy " << describe_parts(c->strategy, m.modalities())
        << "\n";
  });

  // simulate / compare
  SimOptions sim_opts;
  std::string policy_name = "optimized";
  auto* sim = app.add_subcommand("simulate", "Run one policy over a workload");
  add_sim_options(sim, sim_opts);
  sim->add_option("--policy", policy_name, "optimized, random, aggressive or none")
      ->check(CLI::IsMember({"optimized", "random", "aggressive", "none"}))
      ->capture_default_str();
  sim->callback([&] { code = cmd_simulate(sim_opts, policy_name, out); });

  SimOptions cmp_opts;
  std::vector<std::string> cmp_policies = {"optimized", "random", "aggressive", "none"};
  auto* cmp = app.add_subcommand("compare", "Run several policies on one shared job stream");
  add_sim_options(cmp, cmp_opts);
  cmp->add_option("--policies", cmp_policies, "Policies to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"optimized", "random", "aggressive", "none"}))
      ->capture_default_str();
  cmp->callback([&] { code = cmd_compare(cmp_opts, cmp_policies, out); });

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    // --help, including on subcommands
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return code;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(std::move(args), out, err);
}

}  // namespace modsel::cli
