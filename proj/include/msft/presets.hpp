// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named experiment presets: a mixture, its simulated dynamics and the
// strategy budgets. Mixtures follow the ten benchmarks of the reference
// setup (1800 samples each, seed 20) and are extended with five more for
// the 15-task mixture.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "msft/core.hpp"
#include "msft/dynamics.hpp"
#include "msft/scheduler.hpp"

namespace msft {

struct Preset {
  std::string name;
  std::string description;
  MixtureSpec mixture;
  DynamicsConfig dynamics;
  StrategyConfig strategy;
  std::uint64_t seed = 20;
};

namespace detail {

struct BenchmarkShape {
  const char* id;
  const char* name;
  std::int64_t mean_tokens;  // per training sample
  std::int64_t test_items;
};

inline constexpr std::array<BenchmarkShape, 15> kBenchmarks{{
    {"commonsense_qa", "CommonsenseQA", 64, 1221},
    {"openbookqa", "OpenBookQA", 58, 500},
    {"aqua_rat", "AQUA-RAT", 182, 254},
    {"gsm8k", "GSM8K", 236, 1319},
    {"sciq", "SciQ", 121, 1000},
    {"arc_easy", "ARC-Easy", 71, 2376},
    {"hellaswag", "HellaSwag", 118, 2000},
    {"winogrande", "Winogrande", 43, 1267},
    {"boolq", "BoolQ", 147, 2000},
    {"medmcqa", "MedMCQA", 89, 2000},
    {"piqa", "PIQA", 62, 1838},
    {"social_iqa", "SocialIQA", 55, 1954},
    {"race", "RACE", 402, 1045},
    {"mathqa", "MathQA", 97, 2985},
    {"logiqa", "LogiQA", 214, 651},
}};

}  // namespace detail

// Evaluation is 5-shot, so one test item costs about six sample lengths.
inline MixtureSpec paper_mixture(std::size_t n, std::int64_t size = 1800) {
  if (n == 0 || n > detail::kBenchmarks.size()) throw ConfigError("mixture size must be in [1, 15]");
  std::vector<SubDatasetSpec> subs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = detail::kBenchmarks[i];
    subs.push_back({b.id, b.name, size, 1.0, size * b.mean_tokens, b.test_items * 6 * b.mean_tokens});
  }
  return MixtureSpec(std::move(subs));
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{
      "zero-coupling", "fig4-calibrated", "forgetting-on", "positive-transfer", "c1-flops",
      "disk-distinct-peaks", "mix-5", "mix-10", "mix-15"};
  return names;
}

// Ten tasks peaking on consecutive grid points 0.25 .. 2.5 with flat
// post-peak plateaus and no coupling.
inline DynamicsConfig distinct_peak_dynamics(const MixtureSpec& mixture, double step) {
  DynamicsConfig cfg;
  cfg.tasks = mixture.ids();
  const auto n = mixture.size();
  for (std::size_t i = 0; i < n; ++i) {
    TaskCurveParams c;
    c.base_metric = 0.20 + 0.01 * static_cast<double>(i);
    c.peak_metric = 0.60 + 0.02 * static_cast<double>(i);
    c.peak_location = step * static_cast<double>(i + 1);
    c.rise_rate = 1.0;
    c.decay_rate = 0.0;
    cfg.curves.push_back(c);
    cfg.loss.push_back({2.0, 0.4, 0.6});
  }
  cfg.coupling.assign(n, std::vector<double>(n, 0.0));
  cfg.validate();
  return cfg;
}

inline Preset make_preset(std::string_view name, std::uint64_t seed = 20) {
  Preset p;
  p.name = std::string(name);
  p.seed = seed;
  p.strategy.seed = seed;
  SampleOptions opt;
  PeakSpread spread{0.5, 3.0};
  std::size_t n = 10;
  bool sampled = true;

  if (name == "zero-coupling") {
    p.description = "10 tasks, distinct peaks in [0.5, 3], no coupling, no drift";
    opt.mean_abs_shift = 0.0;
  } else if (name == "fig4-calibrated") {
    p.description = "10 tasks, coupling calibrated to a mean |shift| of 0.91 epochs";
  } else if (name == "forgetting-on") {
    p.description = "calibrated coupling with forgetting drift on excluded tasks";
    opt.drift_slope = -0.004;
    opt.loss_step_drop = 0.02;
  } else if (name == "positive-transfer") {
    p.description = "no coupling, excluded tasks keep improving while others train";
    opt.mean_abs_shift = 0.0;
    opt.drift_slope = 0.01;
  } else if (name == "c1-flops") {
    p.description = "compute budget C = 1 with peaks spread over [0.5, 2.5]";
    spread = {0.5, 2.5};
    p.strategy.msft_budget = 1.0;
  } else if (name == "disk-distinct-peaks") {
    p.description = "10 tasks peaking at 0.25 .. 2.5 with flat plateaus, C = 3";
    sampled = false;
  } else if (name == "mix-5" || name == "mix-10" || name == "mix-15") {
    n = name == "mix-5" ? 5 : name == "mix-10" ? 10 : 15;
    p.description = std::to_string(n) + "-task mixture with calibrated coupling";
    spread = {0.5, n == 15 ? 4.0 : 3.0};
  } else {
    throw ConfigError("unknown preset: " + std::string(name));
  }

  p.mixture = paper_mixture(n);
  opt.grid_step = p.strategy.eval_interval;
  opt.max_compute = p.strategy.sft_epochs;
  p.dynamics = sampled ? sample_dynamics(seed, p.mixture, spread, opt)
                       : distinct_peak_dynamics(p.mixture, p.strategy.eval_interval);
  return p;
}

inline SessionSetup session_setup(const Preset& p) {
  return SessionSetup{p.mixture, p.seed, p.strategy.eval_interval, p.dynamics};
}

}  // namespace msft
