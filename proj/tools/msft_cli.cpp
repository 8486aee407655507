// SPDX-License-Identifier: Apache-2.0
// msft: command-line front end for the scheduler, studies and ledgers.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
// Output goes to --out, else $MSFT_OUTPUT_DIR, else ./msft-out. A run that
// fails part-way leaves an INCOMPLETE file next to whatever it wrote.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "msft/harness.hpp"

namespace {

using namespace msft;

struct Common {
  std::string out;
  std::string trainer = "inprocess";
  std::string config;
  std::string preset = "fig4-calibrated";
  std::uint64_t seed = 20;
  std::optional<double> budget;
  std::optional<double> theta;
};

fs::path output_dir(const Common& c, const std::optional<fs::path>& from_config = std::nullopt) {
  if (!c.out.empty()) return c.out;
  if (from_config) return *from_config;
  if (const char* env = std::getenv("MSFT_OUTPUT_DIR"); env && *env) return env;
  return "msft-out";
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = load_experiment(c.config);
  } else {
    cfg.preset = make_preset(c.preset, c.seed);
  }
  if (c.trainer != "inprocess" || c.config.empty()) cfg.trainer = TrainerSpec::parse(c.trainer);
  if (c.budget) {
    ComputeGrid(*c.budget, cfg.preset.strategy.eval_interval);
    cfg.preset.strategy.msft_budget = *c.budget;
  }
  if (c.theta) {
    if (!(*c.theta > 0.0)) throw ConfigError("theta must be > 0");
    cfg.preset.strategy.theta = *c.theta;
  }
  return cfg;
}

SessionFactory factory_for(const ExperimentConfig& cfg) { return make_factory(cfg.trainer, session_setup(cfg.preset)); }

void mark_incomplete(const fs::path& dir, const std::string& why) {
  try {
    write_text(dir / "INCOMPLETE", why + "\n");
  } catch (const std::exception&) {
  }
}

void clear_marker(const fs::path& dir) {
  std::error_code ec;
  fs::remove(dir / "INCOMPLETE", ec);
}

void write_dynamics(const fs::path& dir, const Preset& p) { write_text(dir / "dynamics.ini", dynamics_to_text(p.dynamics)); }

void print_comparison(const ComparisonReport& rep) {
  fmt::print("{:<10} {:>9} {:>7} {:>11} {:>8} {:>6}\n", "strategy", "avg_best", "ep", "PFLOPs", "stddev", "first");
  for (const auto& r : rep.rows)
    fmt::print("{:<10} {:>9.4f} {:>7.2f} {:>11.1f} {:>8.4f} {:>6}\n", r.strategy, r.best_average, r.epochs, r.pflops,
               r.stddev, r.first_places);
}

// Runs the strategies, writing each trace as soon as it exists, then
// renders the report from those traces.
ComparisonReport run_and_report(const ExperimentConfig& cfg, const fs::path& dir, bool concurrent) {
  fs::create_directories(dir);
  write_text(dir / "INCOMPLETE", "run in progress\n");
  write_dynamics(dir, cfg.preset);
  auto factory = factory_for(cfg);
  std::vector<RunResult> runs;
  try {
    runs = run_strategies(cfg.preset, cfg.strategies, factory, concurrent);
  } catch (const RunAborted& e) {
    write_trace_file(trace_path(dir, e.trace.meta.strategy), e.trace);
    throw;
  }
  std::vector<RunTrace> traces;
  for (const auto& r : runs) {
    write_trace_file(trace_path(dir, to_string(r.strategy)), r.trace);
    traces.push_back(r.trace);
  }
  auto rep = render_report(traces, dir);
  clear_marker(dir);
  return rep;
}

void add_common(CLI::App* sub, Common& c, bool with_preset = true) {
  sub->add_option("--out", c.out, "output directory (default $MSFT_OUTPUT_DIR or ./msft-out)");
  sub->add_option("--trainer", c.trainer, "inprocess | subprocess:<command> | tcp:<host>:<port>");
  sub->add_option("--config", c.config, "experiment config file");
  if (with_preset) {
    sub->add_option("--preset", c.preset, "named preset")->check(CLI::IsMember(preset_names()));
    sub->add_option("--seed", c.seed, "seed for dynamics and resampling");
    sub->add_option("--budget", c.budget, "mSFT compute budget C in epochs");
    sub->add_option("--theta", c.theta, "parameter count for FLOPs");
  }
}

int real_main(int argc, char** argv) {
  CLI::App app{"mSFT: overfitting-aware compute scheduling for multi-task SFT"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common c;
  std::string strategy = "msft";
  std::string strategies;
  bool concurrent = false;
  std::vector<double> budgets;

  auto* run = app.add_subcommand("run", "run one strategy and write its artifacts");
  add_common(run, c);
  run->add_option("--strategy", strategy, "sft | continual | sro | soft_sro | msft");

  auto* compare = app.add_subcommand("compare", "run several strategies on one preset and compare them");
  add_common(compare, c);
  compare->add_option("--strategies", strategies, "comma-separated list (default: all five)");
  compare->add_flag("--concurrent", concurrent, "one thread per strategy");
  compare->add_option("--budgets", budgets, "also sweep mSFT over these budgets")->delimiter(',');

  auto* delta = app.add_subcommand("study-delta", "peak shift caused by excluding the first-peaking dataset");
  add_common(delta, c);

  bool battery = false;
  auto* disk = app.add_subcommand("study-disk", "checkpoint copies kept by mSFT");
  add_common(disk, c);
  disk->add_flag("--battery", battery, "run every shipped preset and report the average");

  std::string method;
  FlopsInputs fin;
  DynamixExtras dx;
  bool oracle = false;
  auto* flops = app.add_subcommand("flops", "closed-form FLOPs ledgers");
  add_common(flops, c);
  flops->add_option("--method", method, "sft | continual | dynamix | ies | sro | soft_sro | msft");
  flops->add_option("--steps", fin.steps, "grid steps");
  flops->add_option("--t-train", fin.t_train, "training tokens per step");
  flops->add_option("--t-validation", fin.t_validation, "validation tokens per step");
  flops->add_option("--tasks", dx.tasks, "dynamix: number of tasks N");
  flops->add_option("--update-steps", dx.update_steps, "dynamix: mixture updates");
  flops->add_option("--lookahead-batch", dx.lookahead_batch, "dynamix: look-ahead batch B");
  flops->add_option("--avg-tokens", dx.avg_tokens, "dynamix: tokens per look-ahead sample");
  flops->add_flag("--oracle", oracle, "run the preset's strategies and check ledgers against their traces");

  std::string pipeline_file;
  bool builtin = false;
  auto* pipeline = app.add_subcommand("pipeline", "post-training share of a full training pipeline");
  pipeline->add_option("--config", pipeline_file, "file with one [stage.<name>] section per stage");
  pipeline->add_flag("--published-7b", builtin, "use the published 7B stage totals");
  pipeline->add_option("--out", c.out, "output directory");

  bool stdio = false;
  int port = -1;
  std::size_t max_conn = 0;
  auto* serve_cmd = app.add_subcommand("serve-trainer", "host the trainer protocol over stdio or TCP");
  serve_cmd->add_flag("--stdio", stdio, "serve one session on stdin/stdout");
  serve_cmd->add_option("--port", port, "listen on 127.0.0.1:<port> (0 picks a free port)");
  serve_cmd->add_option("--max-connections", max_conn, "exit after this many sessions (0 = unlimited)");

  std::string traces_dir;
  auto* report = app.add_subcommand("report", "render tables from saved traces");
  report->add_option("--traces", traces_dir, "directory of *.trace.jsonl files")->required();
  report->add_option("--out", c.out, "output directory (default: the traces directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*run) {
      auto cfg = resolve(c);
      cfg.strategies = {parse_strategy(strategy)};
      const auto dir = output_dir(c, cfg.output);
      auto rep = run_and_report(cfg, dir, false);
      print_comparison(rep);
      fmt::print("artifacts in {}\n", dir.string());
      return 0;
    }
    if (*compare) {
      auto cfg = resolve(c);
      if (!strategies.empty()) cfg.strategies = parse_strategy_list(strategies);
      const auto dir = output_dir(c, cfg.output);
      auto rep = run_and_report(cfg, dir, concurrent);
      if (!budgets.empty()) {
        auto pts = budget_sweep(cfg.preset, factory_for(cfg), budgets);
        std::optional<ComparisonRow> sft;
        if (auto* r = rep.find("sft")) sft = *r;
        write_text(dir / "budget_sweep.csv", budget_sweep_csv(pts, sft));
      }
      print_comparison(rep);
      fmt::print("artifacts in {}\n", dir.string());
      return 0;
    }
    if (*delta) {
      auto cfg = resolve(c);
      const auto dir = output_dir(c, cfg.output);
      fs::create_directories(dir);
      write_dynamics(dir, cfg.preset);
      ComputeGrid grid(cfg.preset.strategy.sft_epochs, cfg.preset.strategy.eval_interval);
      auto d = delta_cstar_study(factory_for(cfg), cfg.preset.mixture, grid, cfg.preset.strategy);
      write_text(dir / "delta.csv", delta_csv(d, grid.step()));
      write_trace_file(dir / "delta_full.trace.jsonl", d.full);
      write_trace_file(dir / "delta_branch.trace.jsonl", d.branch);
      fmt::print("bifurcation {} at {:.2f} epochs, mean |delta c*| = {:.4f}\n", d.bifurcation, d.bifurcation_epochs,
                 d.mean_abs_shift);
      return 0;
    }
    if (*disk) {
      std::vector<std::string> names;
      if (battery) names = preset_names();
      else names = {c.config.empty() && c.preset == "fig4-calibrated" ? std::string("disk-distinct-peaks") : c.preset};
      const auto dir = output_dir(c);
      fs::create_directories(dir);
      std::string table = "preset,tasks,budget_steps,peak_copies,average_copies,stage_peak_average,predicted_peak,predicted_average\n";
      double sum = 0.0;
      for (const auto& name : names) {
        Common one = c;
        one.preset = name;
        auto cfg = resolve(one);
        auto session = factory_for(cfg)();
        auto r = run_msft(*session, cfg.preset.mixture, cfg.preset.strategy);
        auto u = utilization(r.trace);
        const auto d = static_cast<std::int64_t>(cfg.preset.mixture.size());
        const auto e = ComputeGrid(cfg.preset.strategy.msft_budget, cfg.preset.strategy.eval_interval).steps();
        std::string pp = "", pa = "";
        if (e >= d) {
          auto pred = predicted_utilization(d, e);
          pp = fixed(pred.peak, 2);
          pa = fixed(pred.average, 4);
        }
        table += fmt::format("{},{},{},{},{},{},{},{}\n", name, d, e, fixed(u.peak_copies, 2), fixed(u.average_copies, 4),
                             fixed(u.stage_peak_average, 4), pp, pa);
        sum += u.average_copies;
        if (names.size() == 1) write_text(dir / "utilization.csv", utilization_csv(u));
        fmt::print("{:<20} peak {:>5.1f}  average {:>6.3f}  stage-peak average {:>6.3f}\n", name, u.peak_copies,
                   u.average_copies, u.stage_peak_average);
      }
      write_text(dir / "utilization_summary.csv", table);
      if (names.size() > 1) fmt::print("battery average copies {:.3f}\n", sum / static_cast<double>(names.size()));
      return 0;
    }
    if (*flops) {
      const auto dir = output_dir(c);
      if (oracle) {
        auto cfg = resolve(c);
        auto runs = run_strategies(cfg.preset, all_strategies(), factory_for(cfg));
        std::string table = "strategy,ledger_units,trace_units,equal,pflops\n";
        bool all_equal = true;
        for (const auto& r : runs) {
          auto led = ledger_method(method_of(r.strategy), inputs_from_run(r, cfg.preset.mixture, cfg.preset.strategy.theta));
          auto tr = ledger_from_trace(r.trace, cfg.preset.strategy.theta);
          const bool eq = led.total_units() == tr.total_units();
          all_equal = all_equal && eq;
          table += fmt::format("{},{},{},{},{}\n", to_string(r.strategy), led.total_units(), tr.total_units(), eq ? 1 : 0,
                               fixed(led.pflops(), 3));
        }
        write_text(dir / "flops.csv", table);
        std::cout << table;
        return all_equal ? 0 : 2;
      }
      if (method.empty()) throw ConfigError("flops needs --method or --oracle");
      auto m = parse_method(method);
      fin.theta = c.theta.value_or(1e9);
      if (m == Method::Dynamix) fin.dynamix = dx;
      auto rep = ledger_method(m, fin);
      std::string table = "component,flops\n";
      for (const auto& comp : rep.components)
        table += fmt::format("{},{:.6e}\n", comp.name, rep.theta * static_cast<double>(comp.units));
      table += fmt::format("total,{:.6e}\n", rep.total());
      std::cout << table;
      if (!c.out.empty() || std::getenv("MSFT_OUTPUT_DIR")) write_text(dir / "flops.csv", table);
      return 0;
    }
    if (*pipeline) {
      std::vector<PipelineStageSpec> specs;
      if (builtin == !pipeline_file.empty()) throw ConfigError("pipeline needs exactly one of --config or --published-7b");
      if (builtin) {
        specs = published_7b_pipeline();
      } else {
        auto doc = ConfigDocument::parse(read_file(pipeline_file));
        for (const auto* s : doc.with_prefix("stage")) specs.push_back(pipeline_stage_from_config(*s));
        if (specs.empty()) throw ConfigError("no [stage.*] sections in " + pipeline_file);
      }
      auto rep = proportion_report(specs);
      std::string table = "stage,flops\n";
      for (const auto& [stage, f] : rep.stages) table += fmt::format("{},{:.3e}\n", to_string(stage), f);
      table += fmt::format("total,{:.3e}\npost_total,{:.3e}\npost_over_total_pct,{:.4f}\nsft_over_post_pct,{:.4f}\n",
                           rep.total, rep.post_total, 100.0 * rep.post_over_total, 100.0 * rep.sft_over_post);
      std::cout << table;
      if (!c.out.empty() || std::getenv("MSFT_OUTPUT_DIR")) write_text(output_dir(c) / "pipeline.csv", table);
      return 0;
    }
    if (*serve_cmd) {
      if (stdio == (port >= 0)) throw ConfigError("serve-trainer needs exactly one of --stdio or --port");
      if (stdio) {
        FdChannel ch(0, 1, false);
        ProtocolServer server;
        serve(ch, server);
        return 0;
      }
      if (port > 65535) throw ConfigError("port out of range");
      TcpTrainerServer server(static_cast<std::uint16_t>(port));
      std::cerr << "listening on 127.0.0.1:" << server.port() << std::endl;
      server.run(max_conn);
      return 0;
    }
    if (*report) {
      const fs::path dir = c.out.empty() ? fs::path(traces_dir) : fs::path(c.out);
      auto rep = render_report(read_trace_dir(traces_dir), dir);
      print_comparison(rep);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RunAborted& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    mark_incomplete(output_dir(c), std::string("aborted: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) { return real_main(argc, argv); }
