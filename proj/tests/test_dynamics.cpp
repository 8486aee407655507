// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "msft/presets.hpp"
#include "msft/trainer.hpp"

using namespace msft;

namespace {

// Task a peaks at 1.0, b at 2.0; excluding b moves a's peak by `shift`.
DynamicsConfig two_task_dynamics(double shift) {
  DynamicsConfig cfg;
  cfg.tasks = {"a", "b"};
  cfg.curves = {{0.2, 0.7, 1.0, 1.0, 0.5}, {0.3, 0.6, 2.0, 0.5, 0.5}};
  cfg.loss = {{2.0, 0.5, 0.5}, {2.0, 0.5, 0.5}};
  cfg.coupling = {{0.0, 0.0}, {shift, 0.0}};
  cfg.validate();
  return cfg;
}

// Grid argmax of task 0 when only `exposure` is trained for `steps` ticks.
double grid_argmax(const DynamicsConfig& cfg, std::vector<double> exposure, Tick steps, double step = 0.25) {
  auto st = SimState::fresh(cfg.size());
  double best = -1.0, at = 0.0;
  for (Tick k = 1; k <= steps; ++k) {
    advance(cfg, st, exposure, 1, step);
    double m = metric_at(cfg, std::size_t{0}, st.tasks[0]);
    if (m > best) {
      best = m;
      at = static_cast<double>(k) * step;
    }
  }
  return at;
}

}  // namespace

TEST(Sampler, DeterministicAndDistinctPeaks) {
  auto mix = paper_mixture(10);
  auto a = sample_dynamics(20, mix, {0.5, 3.0});
  auto b = sample_dynamics(20, mix, {0.5, 3.0});
  EXPECT_EQ(a, b);
  std::set<double> peaks;
  for (const auto& c : a.curves) {
    EXPECT_GE(c.peak_location, 0.5);
    EXPECT_LE(c.peak_location, 3.0);
    peaks.insert(c.peak_location);
  }
  EXPECT_EQ(peaks.size(), 10u);
}

TEST(Sampler, SeedsDiffer) {
  auto mix = paper_mixture(10);
  auto a = sample_dynamics(20, mix, {0.5, 3.0});
  auto b = sample_dynamics(21, mix, {0.5, 3.0});
  std::vector<double> pa, pb;
  for (const auto& c : a.curves) pa.push_back(c.peak_location);
  for (const auto& c : b.curves) pb.push_back(c.peak_location);
  EXPECT_NE(pa, pb);
}

TEST(Sampler, ZeroMagnitudeGivesZeroCoupling) {
  SampleOptions opt;
  opt.mean_abs_shift = 0.0;
  auto cfg = sample_dynamics(20, paper_mixture(10), {0.5, 3.0}, opt);
  for (const auto& row : cfg.coupling)
    for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(Sampler, RejectsSpreadBelowOneStep) {
  EXPECT_THROW(sample_dynamics(20, paper_mixture(3), {0.1, 3.0}), ConfigError);
}

TEST(Curve, BaseAtZeroAndPeakAtPeak) {
  auto cfg = two_task_dynamics(0.0);
  TaskExposure x;
  EXPECT_EQ(metric_at(cfg, std::size_t{0}, x), 0.2);
  x.effective = 1.0;
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, x), 0.7, 1e-12);
}

TEST(Curve, GridArgmaxIsPeak) {
  EXPECT_EQ(grid_argmax(two_task_dynamics(0.0), {1.0, 1.0}, 12), 1.0);
}

TEST(Curve, ExclusionShiftMovesGridArgmax) {
  // b never trains, so a's peak is pushed by +0.5 from the start.
  EXPECT_EQ(grid_argmax(two_task_dynamics(0.5), {1.0, 0.0}, 12), 1.5);
}

TEST(Curve, ShiftIsContinuousAtTheMomentItApplies) {
  auto cfg = two_task_dynamics(0.75);
  auto st = SimState::fresh(2);
  advance(cfg, st, std::vector<double>{1.0, 1.0}, 2, 0.25);
  const double before = metric_at(cfg, std::size_t{0}, st.tasks[0]);
  apply_shift(cfg.curves[0], st.tasks[0], 0.75);
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, st.tasks[0]), before, 1e-12);
  // Remaining distance 0.5 grows to 1.25: new peak at e = 1.75.
  EXPECT_DOUBLE_EQ(cfg.curves[0].peak_location + st.tasks[0].offset, 1.75);
  st.tasks[0].effective = 1.75;
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, st.tasks[0]), 0.7, 1e-12);
}

TEST(Curve, NegativeShiftKeepsHalfTheRemainingDistance) {
  auto cfg = two_task_dynamics(-5.0);
  TaskExposure x;
  x.effective = 0.5;
  apply_shift(cfg.curves[0], x, -5.0);
  EXPECT_DOUBLE_EQ(cfg.curves[0].peak_location + x.offset, 0.75);
}

TEST(Curve, ShiftAfterPeakIsIgnored) {
  auto cfg = two_task_dynamics(0.5);
  TaskExposure x;
  x.effective = 1.25;
  const double before = metric_at(cfg, std::size_t{0}, x);
  apply_shift(cfg.curves[0], x, 0.5);
  EXPECT_EQ(x.offset, 0.0);
  EXPECT_EQ(metric_at(cfg, std::size_t{0}, x), before);
}

TEST(Curve, CoverageScalesGainOverBase) {
  auto cfg = two_task_dynamics(0.0);
  cfg.coverage_exponent = 0.5;
  TaskExposure x;
  x.effective = 1.0;
  x.coverage = 0.25;
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, x), 0.2 + 0.5 * 0.5, 1e-12);
  x.coverage = 1.0;
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, x), 0.7, 1e-12);
}

TEST(Curve, DriftMovesIdleTasks) {
  auto cfg = two_task_dynamics(0.0);
  cfg.drift_slope = -0.01;
  auto st = SimState::fresh(2);
  advance(cfg, st, std::vector<double>{1.0, 1.0}, 4, 0.25);
  const double at_exclusion = metric_at(cfg, std::size_t{0}, st.tasks[0]);
  advance(cfg, st, std::vector<double>{0.0, 1.0}, 4, 0.25);
  EXPECT_EQ(st.tasks[0].effective, 1.0);
  EXPECT_NEAR(metric_at(cfg, std::size_t{0}, st.tasks[0]), at_exclusion - 0.01, 1e-12);
}

TEST(Loss, InitialAtZeroAndStepDrop) {
  auto cfg = two_task_dynamics(0.0);
  auto st = SimState::fresh(2);
  EXPECT_EQ(loss_at(cfg, st), 2.0);
  cfg.loss_step_drop = 0.1;
  advance(cfg, st, std::vector<double>{1.0, 1.0}, 4, 0.25);
  const double before = loss_at(cfg, st);
  st.exclusions.push_back({0, st.tick});
  EXPECT_NEAR(loss_at(cfg, st), before - 0.1, 1e-12);
}

TEST(Loss, ZeroDropIsContinuousAcrossExclusion) {
  auto cfg = two_task_dynamics(0.0);
  auto st = SimState::fresh(2);
  advance(cfg, st, std::vector<double>{1.0, 1.0}, 4, 0.25);
  const double before = loss_at(cfg, st);
  st.exclusions.push_back({0, st.tick});
  EXPECT_EQ(loss_at(cfg, st), before);
}

TEST(Loss, NonIncreasingForFixedActiveSet) {
  auto cfg = two_task_dynamics(0.0);
  auto st = SimState::fresh(2);
  double prev = loss_at(cfg, st);
  for (int k = 0; k < 20; ++k) {
    advance(cfg, st, std::vector<double>{1.0, 1.0}, 1, 0.25);
    EXPECT_LE(loss_at(cfg, st), prev);
    prev = loss_at(cfg, st);
  }
}

TEST(DynamicsConfig, TextRoundTrip) {
  SampleOptions opt;
  opt.drift_slope = -0.004;
  opt.loss_step_drop = 0.02;
  auto cfg = sample_dynamics(20, paper_mixture(10), {0.5, 3.0}, opt);
  EXPECT_EQ(dynamics_from_text(dynamics_to_text(cfg)), cfg);
}

TEST(DynamicsConfig, RejectsInvalid) {
  auto cfg = two_task_dynamics(0.0);
  cfg.coverage_exponent = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = two_task_dynamics(0.0);
  cfg.curves[0].peak_metric = 0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(dynamics_from_text("[dynamics]\n[task.a]\nbase = 0.1\npeak = 0.5\npeak_location = 1\nrise = 1\n"
                                  "[coupling]\na -> a = 0.5\n"),
               ConfigError);
}

TEST(Session, InitialStateAndBaseMetrics) {
  auto p = make_preset("zero-coupling");
  SimulatorSession s;
  s.init(session_setup(p));
  EXPECT_EQ(s.position(), 0.0);
  for (std::size_t i = 0; i < p.mixture.size(); ++i)
    EXPECT_EQ(s.evaluate(p.mixture[i].id), p.dynamics.curves[i].base_metric);
  EXPECT_THROW(s.init(session_setup(p)), SessionError);
}

TEST(Session, RequiresInit) {
  SimulatorSession s;
  EXPECT_THROW(s.evaluate("a"), SessionError);
}

TEST(Session, TrainAdvancesOnlyActiveTasks) {
  auto p = make_preset("zero-coupling");
  SimulatorSession s;
  s.init(session_setup(p));
  std::vector<ActiveDataset> all;
  for (const auto& d : p.mixture) all.push_back({d.id, 1.0});
  s.train(all, 0.25);
  for (const auto& t : s.state().tasks) EXPECT_EQ(t.effective, 0.25);
  const auto& frozen = p.mixture[9].id;
  const double m = s.evaluate(frozen);
  all.pop_back();
  s.train(all, 0.25);
  EXPECT_EQ(s.state().tasks[9].effective, 0.25);
  EXPECT_EQ(s.evaluate(frozen), m);
  EXPECT_EQ(s.position(), 0.5);
  EXPECT_THROW(s.train(all, 0.3), SessionError);
  EXPECT_THROW(s.train({}, 0.25), SessionError);
}

TEST(Session, PeakMetricAtPeakGridPoint) {
  auto p = make_preset("zero-coupling");
  SimulatorSession s;
  s.init(session_setup(p));
  std::vector<ActiveDataset> all;
  for (const auto& d : p.mixture) all.push_back({d.id, 1.0});
  for (Tick k = 1; k <= 12; ++k) {
    s.train(all, 0.25);
    for (std::size_t i = 0; i < p.mixture.size(); ++i)
      if (p.dynamics.curves[i].peak_location == s.position()) {
        EXPECT_NEAR(s.evaluate(p.mixture[i].id), p.dynamics.curves[i].peak_metric, 1e-12);
      }
  }
}

TEST(Session, SaveLoadRestoresState) {
  auto p = make_preset("fig4-calibrated");
  SimulatorSession s;
  s.init(session_setup(p));
  std::vector<ActiveDataset> all;
  for (const auto& d : p.mixture) all.push_back({d.id, 1.0});
  for (int k = 0; k < 4; ++k) s.train(all, 0.25);
  auto blob = s.save("A");
  const auto before = s.state();
  const double metric = s.evaluate(p.mixture[0].id);
  all.erase(all.begin());
  s.train(all, 0.5);
  EXPECT_EQ(s.position(), 1.5);
  s.load("A", blob);
  EXPECT_EQ(s.position(), 1.0);
  EXPECT_EQ(s.state(), before);
  EXPECT_EQ(s.evaluate(p.mixture[0].id), metric);
  EXPECT_EQ(s.save("B"), blob);
  EXPECT_THROW(s.load("C", "{not json"), SessionError);
}
