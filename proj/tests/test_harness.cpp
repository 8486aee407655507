// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <unistd.h>

#include "msft/harness.hpp"

using namespace msft;

namespace {

std::vector<RunResult> run_all(const Preset& p) {
  return run_strategies(p, all_strategies(), simulator_factory(session_setup(p)));
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("msft_harness_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  return d;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Summary, MatchesRunResultForEveryStrategy) {
  auto p = make_preset("forgetting-on");
  for (const auto& r : run_all(p)) {
    auto s = summarize_trace(r.trace);
    SCOPED_TRACE(s.strategy);
    EXPECT_EQ(s.strategy, to_string(r.strategy));
    EXPECT_EQ(s.best_average, r.best_average);
    EXPECT_EQ(s.best_tick, r.best_tick);
    EXPECT_EQ(s.best_stage, r.best_stage);
    EXPECT_EQ(s.best_metrics, r.best_metrics);
    EXPECT_EQ(s.epochs, r.epochs_at_best);
    ASSERT_EQ(s.per_task_best.size(), r.per_task_best.size());
    for (std::size_t i = 0; i < s.per_task_best.size(); ++i)
      EXPECT_EQ(s.per_task_best[i].metric, r.per_task_best[i].metric);
    EXPECT_EQ(s.flops.total_units(),
              ledger_method(method_of(r.strategy), inputs_from_run(r, p.mixture, p.strategy.theta)).total_units());
  }
}

TEST(Summary, DecompositionMatchesRun) {
  auto p = make_preset("forgetting-on");
  SimulatorSession s;
  s.init(session_setup(p));
  auto r = run_msft(s, p.mixture, p.strategy);
  auto a = forgetting_decomposition(r);
  auto b = decomposition_from_summary(summarize_trace(r.trace));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].dataset, b[i].dataset);
    EXPECT_EQ(a[i].value, b[i].value);
  }
}

TEST(Summary, RejectsIncompleteTrace) {
  RunTrace t;
  t.meta.complete = false;
  EXPECT_THROW(summarize_trace(t), TraceError);
}

TEST(Smoothing, ConstantSeriesUnchanged) {
  std::vector<double> xs(37, 0.625);
  EXPECT_EQ(moving_average(xs), xs);
}

TEST(Smoothing, TrailingWindow) {
  EXPECT_EQ(moving_average({1, 2, 3, 4}, 2), (std::vector<double>{1, 1.5, 2.5, 3.5}));
  EXPECT_THROW(moving_average({1.0}, 0), ConfigError);
}

TEST(Comparison, MixedGridsRejected) {
  auto a = make_preset("zero-coupling");
  auto b = a;
  b.strategy.eval_interval = 0.5;
  b.dynamics = sample_dynamics(20, b.mixture, {0.5, 3.0}, {0.5});
  SimulatorSession s1, s2;
  s1.init(session_setup(a));
  s2.init(session_setup(b));
  auto ra = run_sft(s1, a.mixture, a.strategy);
  auto rb = run_sft(s2, b.mixture, b.strategy);
  try {
    build_comparison({summarize_trace(ra.trace), summarize_trace(rb.trace)});
    FAIL() << "expected mixed-grid error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("mixed grids"), std::string::npos);
  }
}

TEST(Comparison, TiesAwardNoFirstPlace) {
  auto p = make_preset("zero-coupling");
  SimulatorSession s;
  s.init(session_setup(p));
  auto r = run_sft(s, p.mixture, p.strategy);
  auto sum = summarize_trace(r.trace);
  auto rep = build_comparison({sum, sum});
  for (const auto& row : rep.rows) EXPECT_EQ(row.first_places, 0);
  auto single = build_comparison({sum});
  EXPECT_EQ(single.rows[0].first_places, 0);
}

TEST(Comparison, ZeroCouplingMsftNotBelowSft) {
  auto p = make_preset("zero-coupling");
  std::vector<TraceSummary> sums;
  for (const auto& r : run_all(p)) sums.push_back(summarize_trace(r.trace));
  auto rep = build_comparison(sums);
  EXPECT_GE(rep.find("msft")->best_average - rep.find("sft")->best_average, 0.0);
  int total = 0;
  for (const auto& row : rep.rows) total += row.first_places;
  EXPECT_LE(total, static_cast<int>(p.mixture.size()));
}

TEST(Report, CurveTableMarksPeakOfEveryTask) {
  auto p = make_preset("fig4-calibrated");
  SimulatorSession s;
  s.init(session_setup(p));
  auto r = run_sft(s, p.mixture, p.strategy);
  auto csv = curve_csv({summarize_trace(r.trace)});
  auto rows = lines_of(csv);
  EXPECT_EQ(rows.size(), 1 + p.mixture.size() * 40);
  for (const auto& id : p.mixture.ids()) {
    auto pk = peak_of(r.curve, id);
    auto expect = fmt::format("sft,{},0,{},{},{},{},1", id, fixed(static_cast<double>(pk.tick) * 0.25, 4),
                              fixed(pk.metric), fixed(static_cast<double>(pk.tick) * 0.25, 4), fixed(pk.metric));
    EXPECT_EQ(std::count(rows.begin(), rows.end(), expect), 1) << id;
  }
}

TEST(Report, ExclusionMarkersAtRollbackPoints) {
  auto p = make_preset("forgetting-on");
  SimulatorSession s;
  s.init(session_setup(p));
  auto r = run_msft(s, p.mixture, p.strategy);
  std::vector<std::string> expect;
  std::vector<std::string> excluded;
  for (const auto& ev : r.trace.events()) {
    if (auto* x = std::get_if<event::Exclude>(&ev)) excluded.push_back(x->dataset);
    if (auto* rb = std::get_if<event::Rollback>(&ev))
      expect.push_back(fmt::format("msft,exclusion,,{},,,{}", fixed(static_cast<double>(rb->tick) * 0.25, 4),
                                   excluded.back()));
  }
  std::vector<std::string> got;
  for (const auto& l : lines_of(loss_csv({summarize_trace(r.trace)})))
    if (l.rfind("msft,exclusion", 0) == 0) got.push_back(l);
  EXPECT_EQ(got, expect);
  EXPECT_FALSE(got.empty());
}

TEST(Report, RenderIsDeterministicAndReadable) {
  auto p = make_preset("fig4-calibrated");
  std::vector<RunTrace> traces;
  for (auto& r : run_all(p)) traces.push_back(std::move(r.trace));
  // read_trace_dir returns traces in file-name order.
  std::ranges::sort(traces, {}, [](const RunTrace& t) { return t.meta.strategy; });
  auto d1 = scratch("r1"), d2 = scratch("r2");
  render_report(traces, d1);
  for (const auto& t : traces) write_trace_file(trace_path(d2, t.meta.strategy), t);
  auto back = read_trace_dir(d2);
  render_report(back, d2);
  for (auto f : {"comparison.csv", "per_task.csv", "curve.csv", "loss.csv", "decomposition.csv"})
    EXPECT_EQ(read_file(d1 / f), read_file(d2 / f)) << f;
  auto j = nlohmann::json::parse(read_file(d1 / "summary.json"));
  EXPECT_EQ(j.at("rows").size(), 5u);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Report, ConcurrentRunsMatchSequential) {
  auto p = make_preset("forgetting-on");
  auto f = simulator_factory(session_setup(p));
  auto a = run_strategies(p, all_strategies(), f, false);
  auto b = run_strategies(p, all_strategies(), f, true);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].trace, b[i].trace);
}

TEST(Config, TrainerSpecParsing) {
  EXPECT_EQ(TrainerSpec::parse("").kind, TrainerSpec::Kind::InProcess);
  auto s = TrainerSpec::parse("subprocess:msft serve-trainer --stdio");
  EXPECT_EQ(s.kind, TrainerSpec::Kind::Subprocess);
  EXPECT_EQ(s.command, "msft serve-trainer --stdio");
  auto t = TrainerSpec::parse("tcp:localhost:7000");
  EXPECT_EQ(t.host, "localhost");
  EXPECT_EQ(t.port, 7000);
  EXPECT_EQ(TrainerSpec::parse(t.str()).str(), t.str());
  EXPECT_THROW(TrainerSpec::parse("tcp:host:99999"), ConfigError);
  EXPECT_THROW(TrainerSpec::parse("subprocess:"), ConfigError);
  EXPECT_THROW(TrainerSpec::parse("gpu"), ConfigError);
}

TEST(Config, StrategyListParsing) {
  EXPECT_EQ(parse_strategy_list("sft, msft"), (std::vector<Strategy>{Strategy::SFT, Strategy::MSFT}));
  EXPECT_THROW(parse_strategy_list("sft,sft"), ConfigError);
  EXPECT_THROW(parse_strategy_list("sft,ppo"), ConfigError);
}

TEST(Config, ExperimentFromDocument) {
  auto doc = ConfigDocument::parse(
      "[experiment]\npreset = zero-coupling\nseed = 21\nstrategies = sft,msft\ntheta = 7e9\n"
      "[grid]\nmsft_budget = 2\n");
  auto cfg = experiment_from_document(doc);
  EXPECT_EQ(cfg.preset.name, "zero-coupling");
  EXPECT_EQ(cfg.preset.seed, 21u);
  EXPECT_EQ(cfg.preset.strategy.theta, 7e9);
  EXPECT_EQ(cfg.preset.strategy.msft_budget, 2.0);
  EXPECT_EQ(cfg.strategies.size(), 2u);
  EXPECT_EQ(cfg.preset.dynamics, make_preset("zero-coupling", 21).dynamics);
}

TEST(Config, CustomMixture) {
  auto doc = ConfigDocument::parse(
      "[mixture.alpha]\nsize = 100\ntrain_tokens = 5000\neval_tokens = 600\n"
      "[mixture.beta]\nsize = 300\ntrain_tokens = 9000\neval_tokens = 900\n");
  auto cfg = experiment_from_document(doc);
  EXPECT_EQ(cfg.preset.mixture.ids(), (std::vector<DatasetId>{"alpha", "beta"}));
  EXPECT_EQ(cfg.preset.dynamics.tasks, cfg.preset.mixture.ids());
  auto both = ConfigDocument::parse("[experiment]\npreset = mix-5\n[mixture.a]\nsize = 1\ntrain_tokens = 1\neval_tokens = 1\n");
  EXPECT_THROW(experiment_from_document(both), ConfigError);
}

TEST(Config, RejectsOffGridBudgets) {
  auto doc = ConfigDocument::parse("[grid]\nmsft_budget = 1.1\n");
  EXPECT_THROW(experiment_from_document(doc), ConfigError);
  EXPECT_THROW(experiment_from_document(ConfigDocument::parse("[experiment]\npreset = nope\n")), ConfigError);
}
