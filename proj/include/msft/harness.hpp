// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment plumbing: config files, trainer selection, running strategy
// batteries, and turning traces into report tables.
//
// Every number in a report is derived from traces alone (summarize_trace),
// so `report` over saved traces reproduces what `compare` wrote.
//
// Experiment config:
//
//   [experiment]
//   preset = forgetting-on          # or define [mixture.<id>] sections
//   strategies = sft, msft, sro, soft_sro, continual
//   seed = 20
//   theta = 1e9
//   trainer = inprocess             # subprocess:<command> | tcp:<host>:<port>
//   dynamics_file = dyn.ini         # optional, replaces the preset dynamics
//   output = out
//
//   [grid]
//   eval_interval = 0.25
//   sft_epochs = 10
//   sro_search_budget = 10
//   msft_budget = 3
//   max_no_overfit_windows = 4
//   checkpoint_dir = ckpt           # optional, otherwise in memory
//
//   [mixture.gsm8k]
//   name = GSM8K
//   size = 1800
//   train_tokens = 424800
//   eval_tokens = 1867704

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "msft/ckptstore.hpp"
#include "msft/config.hpp"
#include "msft/core.hpp"
#include "msft/dynamics.hpp"
#include "msft/flops.hpp"
#include "msft/presets.hpp"
#include "msft/protocol.hpp"
#include "msft/scheduler.hpp"
#include "msft/trace.hpp"
#include "msft/trainer.hpp"

namespace msft {

namespace fs = std::filesystem;

// ---- Trainer selection -------------------------------------------------

struct TrainerSpec {
  enum class Kind { InProcess, Subprocess, Tcp };
  Kind kind = Kind::InProcess;
  std::string command;
  std::string host;
  std::uint16_t port = 0;

  static TrainerSpec parse(std::string_view text) {
    TrainerSpec t;
    if (text.empty() || text == "inprocess") return t;
    if (text.rfind("subprocess:", 0) == 0) {
      t.kind = Kind::Subprocess;
      t.command = std::string(text.substr(11));
      if (trim(t.command).empty()) throw ConfigError("subprocess trainer needs a command");
      return t;
    }
    if (text.rfind("tcp:", 0) == 0) {
      auto rest = text.substr(4);
      auto colon = rest.rfind(':');
      if (colon == std::string_view::npos || colon == 0) throw ConfigError("tcp trainer must be tcp:<host>:<port>");
      t.kind = Kind::Tcp;
      t.host = std::string(rest.substr(0, colon));
      auto port = parse_int(rest.substr(colon + 1), "tcp port");
      if (port <= 0 || port > 65535) throw ConfigError("tcp port out of range");
      t.port = static_cast<std::uint16_t>(port);
      return t;
    }
    throw ConfigError("unknown trainer '" + std::string(text) + "' (inprocess | subprocess:<cmd> | tcp:<host>:<port>)");
  }

  std::string str() const {
    switch (kind) {
      case Kind::InProcess: return "inprocess";
      case Kind::Subprocess: return "subprocess:" + command;
      case Kind::Tcp: return "tcp:" + host + ":" + std::to_string(port);
    }
    return {};
  }
};

inline SessionFactory make_factory(const TrainerSpec& spec, SessionSetup setup) {
  switch (spec.kind) {
    case TrainerSpec::Kind::InProcess:
      return simulator_factory(std::move(setup));
    case TrainerSpec::Kind::Subprocess:
      return [cmd = spec.command, setup = std::move(setup)] {
        auto s = std::make_unique<RemoteSession>(SubprocessChannel::spawn(cmd));
        s->init(setup);
        return std::unique_ptr<TrainerSession>(std::move(s));
      };
    case TrainerSpec::Kind::Tcp:
      return [host = spec.host, port = spec.port, setup = std::move(setup)] {
        auto s = std::make_unique<RemoteSession>(tcp_connect(host, port));
        s->init(setup);
        return std::unique_ptr<TrainerSession>(std::move(s));
      };
  }
  throw ConfigError("unknown trainer kind");
}

// ---- Experiment config -------------------------------------------------

inline const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> v{Strategy::SFT, Strategy::MSFT, Strategy::SRO, Strategy::SoftSRO,
                                       Strategy::ContinualSFT};
  return v;
}

inline std::vector<Strategy> parse_strategy_list(std::string_view text) {
  std::vector<Strategy> out;
  for (const auto& s : split_list(text)) {
    auto v = parse_strategy(s);
    if (std::find(out.begin(), out.end(), v) != out.end()) throw ConfigError("strategy listed twice: " + s);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("strategy list is empty");
  return out;
}

struct ExperimentConfig {
  Preset preset;
  std::vector<Strategy> strategies = all_strategies();
  TrainerSpec trainer;
  std::optional<fs::path> output;
};

inline void apply_grid_section(StrategyConfig& s, const ConfigSection& g) {
  s.eval_interval = g.real_or("eval_interval", s.eval_interval);
  s.sft_epochs = g.real_or("sft_epochs", s.sft_epochs);
  s.sro_search_budget = g.real_or("sro_search_budget", s.sro_search_budget);
  s.msft_budget = g.real_or("msft_budget", s.msft_budget);
  s.max_no_overfit_windows = static_cast<int>(g.integer_or("max_no_overfit_windows", s.max_no_overfit_windows));
  if (g.has("checkpoint_dir")) s.checkpoint_dir = fs::path(g.get("checkpoint_dir"));
  // Validates the grid up front.
  ComputeGrid(s.sft_epochs, s.eval_interval);
  ComputeGrid(s.sro_search_budget, s.eval_interval);
  ComputeGrid(s.msft_budget, s.eval_interval);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ExperimentConfig experiment_from_document(const ConfigDocument& doc, const fs::path& base = {}) {
  ExperimentConfig cfg;
  const ConfigSection empty("experiment");
  const auto* exp = doc.find("experiment");
  const auto& e = exp ? *exp : empty;
  const auto seed = static_cast<std::uint64_t>(e.integer_or("seed", 20));
  auto mixtures = doc.with_prefix("mixture");

  if (!mixtures.empty()) {
    if (e.has("preset")) throw ConfigError("give either a preset or [mixture.*] sections, not both");
    std::vector<SubDatasetSpec> subs;
    for (const auto* s : mixtures) {
      SubDatasetSpec d;
      d.id = s->name().substr(8);
      d.name = s->get_or("name", d.id);
      d.size = s->integer("size");
      d.weight = s->real_or("weight", 1.0);
      d.train_tokens_per_epoch = s->integer("train_tokens");
      d.eval_tokens = s->integer("eval_tokens");
      subs.push_back(std::move(d));
    }
    cfg.preset.name = "custom";
    cfg.preset.description = "mixture from config";
    cfg.preset.mixture = MixtureSpec(std::move(subs));
    cfg.preset.seed = seed;
    cfg.preset.strategy.seed = seed;
  } else {
    cfg.preset = make_preset(e.get_or("preset", "fig4-calibrated"), seed);
  }
  cfg.preset.strategy.theta = e.real_or("theta", cfg.preset.strategy.theta);
  if (!(cfg.preset.strategy.theta > 0.0)) throw ConfigError("theta must be > 0");
  if (const auto* g = doc.find("grid")) apply_grid_section(cfg.preset.strategy, *g);

  if (e.has("dynamics_file")) {
    fs::path p = e.get("dynamics_file");
    if (p.is_relative() && !base.empty()) p = base / p;
    cfg.preset.dynamics = dynamics_from_text(read_file(p));
  } else if (!mixtures.empty()) {
    SampleOptions opt;
    opt.grid_step = cfg.preset.strategy.eval_interval;
    opt.max_compute = cfg.preset.strategy.sft_epochs;
    cfg.preset.dynamics = sample_dynamics(seed, cfg.preset.mixture, {}, opt);
  }
  cfg.preset.dynamics.validate();
  cfg.preset.dynamics.check_matches(cfg.preset.mixture);

  if (e.has("strategies")) cfg.strategies = parse_strategy_list(e.get("strategies"));
  cfg.trainer = TrainerSpec::parse(e.get_or("trainer", "inprocess"));
  if (e.has("output")) cfg.output = fs::path(e.get("output"));
  return cfg;
}

inline ExperimentConfig load_experiment(const fs::path& path) {
  auto doc = ConfigDocument::parse(read_file(path));
  return experiment_from_document(doc, path.parent_path());
}

// ---- Running strategies ------------------------------------------------

inline RunResult run_strategy(Strategy s, const SessionFactory& factory, const MixtureSpec& mixture,
                              const StrategyConfig& cfg) {
  switch (s) {
    case Strategy::SFT: {
      auto session = factory();
      return run_sft(*session, mixture, cfg);
    }
    case Strategy::ContinualSFT: {
      auto session = factory();
      return run_continual(*session, mixture, cfg);
    }
    case Strategy::SRO: return run_sro(factory, mixture, cfg);
    case Strategy::SoftSRO: return run_soft_sro(factory, mixture, cfg);
    case Strategy::MSFT: {
      auto session = factory();
      return run_msft(*session, mixture, cfg);
    }
  }
  throw ConfigError("unknown strategy");
}

// One isolated session set per strategy; with `concurrent` the strategies
// run on separate threads. Results come back in the order requested.
inline std::vector<RunResult> run_strategies(const Preset& p, const std::vector<Strategy>& strategies,
                                             const SessionFactory& factory, bool concurrent = false) {
  auto config_for = [&](Strategy s) {
    auto c = p.strategy;
    if (c.checkpoint_dir) c.checkpoint_dir = *c.checkpoint_dir / std::string(to_string(s));
    return c;
  };
  std::vector<RunResult> out;
  if (!concurrent) {
    for (auto s : strategies) out.push_back(run_strategy(s, factory, p.mixture, config_for(s)));
    return out;
  }
  std::vector<std::future<RunResult>> jobs;
  for (auto s : strategies)
    jobs.push_back(std::async(std::launch::async, [&, s] { return run_strategy(s, factory, p.mixture, config_for(s)); }));
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

// ---- Trace summaries ---------------------------------------------------

struct LossPoint {
  std::int64_t index = 0;  // train step number within the result segment
  Tick tick = 0;
  double loss = 0.0;
};

struct ExclusionMark {
  DatasetId dataset;
  int stage = 0;
  Tick tick = 0;
};

struct TraceSummary {
  std::string strategy;
  std::vector<DatasetId> tasks;
  double step = 0.25;
  double theta = 1e9;
  int best_stage = 0;
  Tick best_tick = 0;
  double best_average = 0.0;
  double epochs = 0.0;  // Ep.
  std::vector<double> best_metrics;
  std::vector<TaskBest> per_task_best;
  std::vector<AveragePoint> averages;
  CurveTable curve;  // result segment
  std::vector<LossPoint> losses;
  std::vector<ExclusionMark> exclusions;
  std::vector<Tick> rollbacks;
  std::map<int, Tick> stage_starts;
  FlopsReport flops;
};

// Replays the result segment (everything after the last session start) the
// way the strategies account it: the mixture average at every step end uses
// the latest value of every dataset, and the first strictly highest average
// wins.
inline TraceSummary summarize_trace(const RunTrace& trace) {
  if (!trace.meta.complete) throw TraceError("trace is marked incomplete");
  const auto& evs = trace.events();
  std::size_t start = evs.size();
  for (std::size_t i = 0; i < evs.size(); ++i)
    if (std::holds_alternative<event::SessionStart>(evs[i])) start = i + 1;
  if (start > evs.size()) throw TraceError("trace has no session");

  TraceSummary s;
  s.strategy = trace.meta.strategy;
  s.tasks = trace.meta.mixture;
  s.step = trace.meta.eval_interval;
  s.theta = trace.meta.theta;
  const auto n = s.tasks.size();
  auto index = [&](const DatasetId& id) {
    auto it = std::find(s.tasks.begin(), s.tasks.end(), id);
    if (it == s.tasks.end()) throw TraceError("dataset not in trace mixture: " + id);
    return static_cast<std::size_t>(it - s.tasks.begin());
  };

  std::vector<std::optional<double>> latest(n);
  std::optional<AveragePoint> best;
  int stage = 0;
  std::vector<Tick> phase_epochs;  // continual: rollback tick - stage start
  for (std::size_t i = start; i < evs.size(); ++i) {
    const auto& ev = evs[i];
    if (auto* b = std::get_if<event::StageBegin>(&ev)) {
      stage = b->stage;
      s.stage_starts[b->stage] = b->tick;
    } else if (auto* t = std::get_if<event::TrainStep>(&ev)) {
      s.losses.push_back({static_cast<std::int64_t>(s.losses.size()) + 1, t->tick, t->loss});
    } else if (auto* e = std::get_if<event::Eval>(&ev)) {
      s.curve.add({e->dataset, e->stage, e->tick, e->metric});
      latest[index(e->dataset)] = e->metric;
    } else if (auto* se = std::get_if<event::StepEnd>(&ev)) {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (!latest[k]) throw TraceError("step end before " + s.tasks[k] + " was evaluated");
        sum += *latest[k];
      }
      AveragePoint p{se->stage, se->tick, sum / static_cast<double>(n)};
      s.averages.push_back(p);
      if (!best || p.value > best->value) {
        best = p;
        s.best_metrics.clear();
        for (const auto& v : latest) s.best_metrics.push_back(*v);
      }
    } else if (auto* x = std::get_if<event::Exclude>(&ev)) {
      s.exclusions.push_back({x->dataset, x->stage, x->tick});
    } else if (auto* r = std::get_if<event::Rollback>(&ev)) {
      s.rollbacks.push_back(r->tick);
      phase_epochs.push_back(r->tick - s.stage_starts.at(stage));
    }
  }
  if (!best) throw TraceError("trace has no grid points");
  s.best_stage = best->stage;
  s.best_tick = best->tick;
  s.best_average = best->value;
  s.epochs = static_cast<double>(best->tick) * s.step;
  if (s.strategy == to_string(Strategy::ContinualSFT)) {
    if (phase_epochs.empty()) throw TraceError("continual trace has no phase rollbacks");
    double sum = 0.0;
    for (auto t : phase_epochs) sum += static_cast<double>(t) * s.step;
    s.epochs = sum / static_cast<double>(phase_epochs.size());
  }
  for (const auto& id : s.tasks) {
    auto p = peak_of(s.curve, id);
    s.per_task_best.push_back({id, p.tick, p.metric});
  }
  s.flops = ledger_from_trace(trace, s.theta);
  return s;
}

// Forgetting/transfer per dataset excluded before the global-best stage,
// from an mSFT trace summary.
inline std::vector<DecompositionEntry> decomposition_from_summary(const TraceSummary& s) {
  if (s.strategy != to_string(Strategy::MSFT)) throw Error("decomposition needs an mSFT trace");
  std::vector<DecompositionEntry> out;
  const Tick base = s.stage_starts.at(s.best_stage);
  for (const auto& x : s.exclusions) {
    if (x.stage >= s.best_stage) continue;
    auto at_ex = s.curve.at(x.dataset, x.stage, x.tick);
    auto at_best = s.curve.at(x.dataset, s.best_stage, base);
    if (!at_ex || !at_best) throw TraceError("decomposition values missing for " + x.dataset);
    out.push_back({x.dataset, *at_ex, *at_best, *at_best - *at_ex});
  }
  return out;
}

// ---- Comparison --------------------------------------------------------

struct ComparisonRow {
  std::string strategy;
  double best_average = 0.0;
  double epochs = 0.0;
  double pflops = 0.0;
  std::int64_t flops_units = 0;
  double stddev = 0.0;  // across benchmarks, of the selected model's metrics
  int first_places = 0;
  std::vector<double> theta_star;  // per task at the global best
  std::vector<TaskBest> per_task_best;
};

struct ComparisonReport {
  std::vector<DatasetId> tasks;
  double step = 0.25;
  double theta = 1e9;
  std::vector<ComparisonRow> rows;

  const ComparisonRow* find(std::string_view strategy) const {
    for (const auto& r : rows)
      if (r.strategy == strategy) return &r;
    return nullptr;
  }
};

inline void check_same_grid(const std::vector<TraceSummary>& sums) {
  if (sums.empty()) throw Error("no traces to report");
  for (const auto& s : sums) {
    if (s.step != sums.front().step) throw Error("mixed grids: eval intervals differ between traces");
    if (s.tasks != sums.front().tasks) throw Error("mixed grids: traces cover different mixtures");
  }
}

inline ComparisonReport build_comparison(const std::vector<TraceSummary>& sums) {
  check_same_grid(sums);
  ComparisonReport rep;
  rep.tasks = sums.front().tasks;
  rep.step = sums.front().step;
  rep.theta = sums.front().theta;
  for (const auto& s : sums) {
    ComparisonRow row;
    row.strategy = s.strategy;
    row.best_average = s.best_average;
    row.epochs = s.epochs;
    row.pflops = s.flops.pflops();
    row.flops_units = s.flops.total_units();
    row.theta_star = s.best_metrics;
    row.per_task_best = s.per_task_best;
    double mean = 0.0;
    for (double v : s.best_metrics) mean += v;
    mean /= static_cast<double>(s.best_metrics.size());
    double var = 0.0;
    for (double v : s.best_metrics) var += (v - mean) * (v - mean);
    row.stddev = std::sqrt(var / static_cast<double>(s.best_metrics.size()));
    rep.rows.push_back(std::move(row));
  }
  for (std::size_t t = 0; t < rep.tasks.size(); ++t) {
    std::optional<std::size_t> winner;
    double top = 0.0;
    bool tie = false;
    for (std::size_t r = 0; r < rep.rows.size(); ++r) {
      double v = rep.rows[r].theta_star[t];
      if (!winner || v > top) {
        winner = r;
        top = v;
        tie = false;
      } else if (v == top) {
        tie = true;
      }
    }
    if (winner && !tie && rep.rows.size() > 1) ++rep.rows[*winner].first_places;
  }
  return rep;
}

// ---- Report rendering --------------------------------------------------

inline std::string fixed(double v, int digits = 6) { return fmt::format("{:.{}f}", v, digits); }

// Trailing moving average; the first points average what is available.
inline std::vector<double> moving_average(const std::vector<double>& xs, std::size_t window = 10) {
  if (window == 0) throw ConfigError("smoothing window must be > 0");
  std::vector<double> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto n = std::min(i + 1, window);
    double sum = 0.0;
    for (std::size_t k = i + 1 - n; k <= i; ++k) sum += xs[k];
    out.push_back(sum / static_cast<double>(n));
  }
  return out;
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
  if (!out) throw Error("write failed: " + p.string());
}

inline std::string comparison_csv(const ComparisonReport& rep) {
  const auto* sft = rep.find(to_string(Strategy::SFT));
  std::string out = "strategy,avg_best,ep,pflops,stddev,first_places";
  if (sft) out += ",delta_avg_vs_sft,delta_ep_vs_sft,delta_pflops_vs_sft";
  out += '\n';
  for (const auto& r : rep.rows) {
    out += fmt::format("{},{},{},{},{},{}", r.strategy, fixed(r.best_average), fixed(r.epochs, 4), fixed(r.pflops, 3),
                       fixed(r.stddev), r.first_places);
    if (sft)
      out += fmt::format(",{},{},{}", fixed(r.best_average - sft->best_average), fixed(r.epochs - sft->epochs, 4),
                         fixed(r.pflops - sft->pflops, 3));
    out += '\n';
  }
  return out;
}

// Two labelled row kinds: the single global-best model and each task's
// own best point.
inline std::string per_task_csv(const ComparisonReport& rep) {
  std::string out = "row,strategy,dataset,metric,epochs\n";
  for (const auto& r : rep.rows)
    for (std::size_t t = 0; t < rep.tasks.size(); ++t)
      out += fmt::format("theta_star,{},{},{},\n", r.strategy, rep.tasks[t], fixed(r.theta_star[t]));
  for (const auto& r : rep.rows)
    for (const auto& b : r.per_task_best)
      out += fmt::format("task_best,{},{},{},{}\n", r.strategy, b.dataset, fixed(b.metric),
                         fixed(static_cast<double>(b.tick) * rep.step, 4));
  return out;
}

inline std::string curve_csv(const std::vector<TraceSummary>& sums) {
  std::string out = "strategy,dataset,stage,epochs,metric,peak_epochs,peak_metric,is_peak\n";
  for (const auto& s : sums) {
    for (const auto& id : s.tasks) {
      auto p = peak_of(s.curve, id);
      for (const auto& r : s.curve.series(id)) {
        const bool is_peak = r.tick == p.tick && r.metric == p.metric;
        out += fmt::format("{},{},{},{},{},{},{},{}\n", s.strategy, id, r.stage, fixed(static_cast<double>(r.tick) * s.step, 4),
                           fixed(r.metric), fixed(static_cast<double>(p.tick) * s.step, 4), fixed(p.metric),
                           is_peak ? 1 : 0);
      }
    }
  }
  return out;
}

inline std::string loss_csv(const std::vector<TraceSummary>& sums, std::size_t window = 10) {
  std::string out = "strategy,kind,step,epochs,loss,smoothed,dataset\n";
  for (const auto& s : sums) {
    std::vector<double> xs;
    for (const auto& l : s.losses) xs.push_back(l.loss);
    auto sm = moving_average(xs, window);
    for (std::size_t i = 0; i < s.losses.size(); ++i)
      out += fmt::format("{},loss,{},{},{},{},\n", s.strategy, s.losses[i].index,
                         fixed(static_cast<double>(s.losses[i].tick) * s.step, 4), fixed(xs[i]), fixed(sm[i]));
    // mSFT reverts to exactly the compute point where it excludes.
    for (const auto& x : s.exclusions)
      out += fmt::format("{},exclusion,,{},,,{}\n", s.strategy, fixed(static_cast<double>(x.tick) * s.step, 4), x.dataset);
  }
  return out;
}

inline std::string decomposition_csv(const std::vector<DecompositionEntry>& d) {
  std::string out = "dataset,at_exclusion,at_best,value\n";
  for (const auto& e : d)
    out += fmt::format("{},{},{},{}\n", e.dataset, fixed(e.at_exclusion), fixed(e.at_best), fixed(e.value));
  return out;
}

inline std::string delta_csv(const DeltaStudy& d, double step) {
  std::string out = "dataset,c_star,c_star_after,shift,abs_shift\n";
  for (const auto& e : d.entries)
    out += fmt::format("{},{},{},{},{}\n", e.dataset, fixed(e.c_star, 4), fixed(e.c_star_after, 4), fixed(e.shift, 4),
                       fixed(std::abs(e.shift), 4));
  out += fmt::format("# bifurcation={} at {} epochs (grid {}), mean_abs_shift={}\n", d.bifurcation,
                     fixed(d.bifurcation_epochs, 4), fixed(step, 4), fixed(d.mean_abs_shift, 6));
  return out;
}

inline std::string utilization_csv(const UtilizationStats& u) {
  std::string out = "step,copies\n";
  for (std::size_t i = 0; i < u.per_step.size(); ++i) out += fmt::format("{},{}\n", i + 1, fixed(u.per_step[i], 2));
  return out;
}

struct BudgetPoint {
  double budget = 0.0;
  double best_average = 0.0;
  FlopsReport flops;
};

inline std::vector<BudgetPoint> budget_sweep(const Preset& p, const SessionFactory& factory,
                                             const std::vector<double>& budgets) {
  std::vector<BudgetPoint> out;
  for (double c : budgets) {
    auto cfg = p.strategy;
    cfg.msft_budget = c;
    auto session = factory();
    auto r = run_msft(*session, p.mixture, cfg);
    out.push_back({c, r.best_average, ledger_method(Method::MSFT, inputs_from_run(r, p.mixture, cfg.theta))});
  }
  return out;
}

inline std::string budget_sweep_csv(const std::vector<BudgetPoint>& pts, const std::optional<ComparisonRow>& sft) {
  std::string out = "strategy,budget,avg_best,pflops,train_pflops,validation_active_pflops,validation_excluded_pflops\n";
  if (sft) out += fmt::format("sft,,{},{},,,\n", fixed(sft->best_average), fixed(sft->pflops, 3));
  for (const auto& p : pts)
    out += fmt::format("msft,{},{},{},{},{},{}\n", fixed(p.budget, 4), fixed(p.best_average), fixed(p.flops.pflops(), 3),
                       fixed(p.flops.component("train") / kPeta, 3),
                       fixed(p.flops.component("validation_active") / kPeta, 3),
                       fixed(p.flops.component("validation_excluded") / kPeta, 3));
  return out;
}

inline nlohmann::json summary_json(const ComparisonReport& rep, const std::vector<TraceSummary>& sums) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    nlohmann::json best = nlohmann::json::object();
    for (const auto& b : r.per_task_best) best[b.dataset] = {{"metric", b.metric}, {"tick", b.tick}};
    nlohmann::json star = nlohmann::json::object();
    for (std::size_t t = 0; t < rep.tasks.size(); ++t) star[rep.tasks[t]] = r.theta_star[t];
    rows.push_back({{"strategy", r.strategy},
                    {"avg_best", r.best_average},
                    {"ep", r.epochs},
                    {"flops_units", r.flops_units},
                    {"pflops", r.pflops},
                    {"stddev", r.stddev},
                    {"first_places", r.first_places},
                    {"best_stage", sums[i].best_stage},
                    {"best_tick", sums[i].best_tick},
                    {"theta_star", star},
                    {"per_task_best", best}});
  }
  return {{"tasks", rep.tasks}, {"eval_interval", rep.step}, {"theta", rep.theta}, {"rows", rows}};
}

// Writes comparison.csv, per_task.csv, curve.csv, loss.csv, summary.json
// and, when an mSFT trace is present, decomposition.csv.
inline ComparisonReport render_report(const std::vector<RunTrace>& traces, const fs::path& dir) {
  std::vector<TraceSummary> sums;
  for (const auto& t : traces) sums.push_back(summarize_trace(t));
  auto rep = build_comparison(sums);
  write_text(dir / "comparison.csv", comparison_csv(rep));
  write_text(dir / "per_task.csv", per_task_csv(rep));
  write_text(dir / "curve.csv", curve_csv(sums));
  write_text(dir / "loss.csv", loss_csv(sums));
  for (const auto& s : sums)
    if (s.strategy == to_string(Strategy::MSFT)) write_text(dir / "decomposition.csv", decomposition_csv(decomposition_from_summary(s)));
  write_text(dir / "summary.json", summary_json(rep, sums).dump(2) + "\n");
  return rep;
}

inline fs::path trace_path(const fs::path& dir, std::string_view strategy) {
  return dir / (std::string(strategy) + ".trace.jsonl");
}

inline void write_trace_file(const fs::path& p, const RunTrace& t) { write_text(p, serialize_trace(t)); }

inline RunTrace read_trace_file(const fs::path& p) { return parse_trace(read_file(p)); }

// Traces in a directory, sorted by file name.
inline std::vector<RunTrace> read_trace_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 12 && name.substr(name.size() - 12) == ".trace.jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no *.trace.jsonl files in " + dir.string());
  std::vector<RunTrace> out;
  for (const auto& f : files) out.push_back(read_trace_file(f));
  return out;
}

}  // namespace msft
