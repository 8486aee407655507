// SPDX-License-Identifier: Apache-2.0
#pragma once

// Compute accounting. Training costs 6|theta| FLOPs per token, inference
// 2|theta|. Ledgers are kept in integer "token units" (6 x train tokens +
// 2 x eval tokens, plus 8 x look-ahead tokens for Dynamix) and multiplied
// by |theta| once, so the closed forms and the trace oracle agree exactly.
//
//   SFT       steps * (6 t_train + 2 t_val)
//   Continual sum_i steps * (6 t_train,i + 2 t_val)
//   Dynamix   steps * 6 t_train + updates * N * 8 * B * t_avg + steps * 2 t_val
//   IES       sum_c (6 t_train^(c) + 2 t_val)
//   SRO       SFT(search) + sum_c (6 t_train^(c) + 2 t_val)
//   Soft SRO  SFT(search) + steps * (6 sum_i t_train,i' + 2 t_val)
//   mSFT      sum_s [steps_s * (6 t_train(A_s) + 2 t_val(A_s)) + 2 t_val(E_s)]

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msft/core.hpp"
#include "msft/scheduler.hpp"
#include "msft/trace.hpp"

namespace msft {

inline constexpr double kPeta = 1e15;

inline double flops_train(double theta, double tokens) { return 6.0 * theta * tokens; }
inline double flops_infer(double theta, double tokens) { return 2.0 * theta * tokens; }

enum class Method { SFT, Continual, Dynamix, IES, SRO, SoftSRO, MSFT };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::SFT: return "sft";
    case Method::Continual: return "continual";
    case Method::Dynamix: return "dynamix";
    case Method::IES: return "ies";
    case Method::SRO: return "sro";
    case Method::SoftSRO: return "soft_sro";
    case Method::MSFT: return "msft";
  }
  return "unknown";
}

inline Method parse_method(std::string_view s) {
  for (auto m : {Method::SFT, Method::Continual, Method::Dynamix, Method::IES, Method::SRO, Method::SoftSRO,
                 Method::MSFT})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method: " + std::string(s));
}

inline Method method_of(Strategy s) {
  switch (s) {
    case Strategy::SFT: return Method::SFT;
    case Strategy::ContinualSFT: return Method::Continual;
    case Strategy::SRO: return Method::SRO;
    case Strategy::SoftSRO: return Method::SoftSRO;
    case Strategy::MSFT: return Method::MSFT;
  }
  return Method::SFT;
}

struct DynamixExtras {
  std::int64_t tasks = 0;         // N
  std::int64_t update_steps = 0;  // mixture updates
  std::int64_t lookahead_batch = 0;  // B
  std::int64_t avg_tokens = 0;       // t_avg per look-ahead sample
};

struct SearchPhase {
  std::int64_t steps = 0;
  std::int64_t t_train = 0;
  std::int64_t t_validation = 0;
};

struct MsftStageTally {
  std::int64_t steps = 0;
  std::int64_t t_train_active = 0;
  std::int64_t t_validation_active = 0;
  std::int64_t t_validation_excluded = 0;
};

// All token tallies are per grid step.
struct FlopsInputs {
  double theta = 1e9;
  std::int64_t t_train = 0;
  std::int64_t t_validation = 0;
  std::int64_t steps = 0;
  std::vector<std::int64_t> per_subset_train;  // Continual
  std::optional<DynamixExtras> dynamix;
  std::optional<std::vector<std::int64_t>> active_train_series;  // IES, SRO: t_train^(c)
  std::optional<SearchPhase> search;                             // SRO, Soft SRO
  std::optional<std::int64_t> weighted_train;                    // Soft SRO
  std::optional<std::vector<MsftStageTally>> msft_stages;
};

struct FlopsComponent {
  std::string name;
  std::int64_t units = 0;
};

struct FlopsReport {
  std::string method;
  double theta = 1e9;
  std::vector<FlopsComponent> components;

  std::int64_t total_units() const {
    std::int64_t u = 0;
    for (const auto& c : components) u += c.units;
    return u;
  }
  double total() const { return theta * static_cast<double>(total_units()); }
  double pflops() const { return total() / kPeta; }
  double component(std::string_view name) const {
    for (const auto& c : components)
      if (c.name == name) return theta * static_cast<double>(c.units);
    throw Error("no FLOPs component " + std::string(name));
  }
};

namespace detail {

template <class T>
const T& need(const std::optional<T>& v, const char* field, Method m) {
  if (!v) throw ConfigError(std::string(to_string(m)) + " ledger needs " + field);
  return *v;
}

inline std::int64_t sft_units(std::int64_t steps, std::int64_t t_train, std::int64_t t_val) {
  return steps * (6 * t_train + 2 * t_val);
}

}  // namespace detail

inline FlopsReport ledger_method(Method m, const FlopsInputs& in) {
  if (!(in.theta > 0.0)) throw ConfigError("theta must be > 0");
  FlopsReport r;
  r.method = std::string(to_string(m));
  r.theta = in.theta;
  auto add = [&](std::string name, std::int64_t units) { r.components.push_back({std::move(name), units}); };
  switch (m) {
    case Method::SFT:
      add("train", in.steps * 6 * in.t_train);
      add("validation", in.steps * 2 * in.t_validation);
      break;
    case Method::Continual: {
      if (in.per_subset_train.empty()) throw ConfigError("continual ledger needs per_subset_train");
      std::int64_t tr = 0;
      for (auto t : in.per_subset_train) tr += t;
      add("train", in.steps * 6 * tr);
      add("validation", in.steps * 2 * in.t_validation * static_cast<std::int64_t>(in.per_subset_train.size()));
      break;
    }
    case Method::Dynamix: {
      const auto& d = detail::need(in.dynamix, "dynamix extras (tasks, update_steps, lookahead_batch, avg_tokens)", m);
      add("train", in.steps * 6 * in.t_train);
      add("lookahead", d.update_steps * d.tasks * 8 * d.lookahead_batch * d.avg_tokens);
      add("validation", in.steps * 2 * in.t_validation);
      break;
    }
    case Method::IES: {
      const auto& series = detail::need(in.active_train_series, "active_train_series", m);
      std::int64_t tr = 0;
      for (auto t : series) tr += t;
      add("train", 6 * tr);
      add("validation", static_cast<std::int64_t>(series.size()) * 2 * in.t_validation);
      break;
    }
    case Method::SRO: {
      const auto& s = detail::need(in.search, "search", m);
      const auto& series = detail::need(in.active_train_series, "active_train_series", m);
      add("search", detail::sft_units(s.steps, s.t_train, s.t_validation));
      std::int64_t tr = 0;
      for (auto t : series) tr += t;
      add("train", 6 * tr);
      add("validation", static_cast<std::int64_t>(series.size()) * 2 * in.t_validation);
      break;
    }
    case Method::SoftSRO: {
      const auto& s = detail::need(in.search, "search", m);
      const auto w = detail::need(in.weighted_train, "weighted_train", m);
      add("search", detail::sft_units(s.steps, s.t_train, s.t_validation));
      add("train", in.steps * 6 * w);
      add("validation", in.steps * 2 * in.t_validation);
      break;
    }
    case Method::MSFT: {
      const auto& stages = detail::need(in.msft_stages, "msft_stages", m);
      std::int64_t tr = 0, va = 0, ve = 0;
      for (const auto& s : stages) {
        tr += s.steps * 6 * s.t_train_active;
        va += s.steps * 2 * s.t_validation_active;
        ve += 2 * s.t_validation_excluded;
      }
      add("train", tr);
      add("validation_active", va);
      add("validation_excluded", ve);
      break;
    }
  }
  return r;
}

// Brute-force oracle: 6 per training token, 2 per evaluation token.
inline FlopsReport ledger_from_trace(const RunTrace& trace, double theta) {
  if (!trace.meta.complete) throw Error("cannot account an incomplete trace");
  std::int64_t train = 0, eval = 0;
  for (const auto& ev : trace.events()) {
    if (auto* t = std::get_if<event::TrainStep>(&ev)) train += t->tokens;
    else if (auto* e = std::get_if<event::Eval>(&ev)) eval += e->tokens;
  }
  FlopsReport r;
  r.method = "trace";
  r.theta = theta;
  r.components = {{"train", 6 * train}, {"validation", 2 * eval}};
  return r;
}

namespace detail {

inline std::int64_t train_tokens(const MixtureSpec& m, const std::vector<DatasetId>& ids, double step) {
  std::int64_t t = 0;
  for (const auto& id : ids) t += step_train_tokens(m[m.require_index(id)], step);
  return t;
}

inline std::int64_t eval_tokens(const MixtureSpec& m, const std::vector<DatasetId>& ids) {
  std::int64_t t = 0;
  for (const auto& id : ids) t += m[m.require_index(id)].eval_tokens;
  return t;
}

}  // namespace detail

// Ledger inputs reconstructed from a run's schedule (stages, exclusions,
// search phase), independently of its trace.
inline FlopsInputs inputs_from_run(const RunResult& r, const MixtureSpec& mixture, double theta) {
  FlopsInputs in;
  in.theta = theta;
  const double step = r.step;
  const auto ids = mixture.ids();
  in.t_train = detail::train_tokens(mixture, ids, step);
  in.t_validation = detail::eval_tokens(mixture, ids);
  switch (r.strategy) {
    case Strategy::SFT:
      in.steps = r.stages.at(0).steps;
      break;
    case Strategy::ContinualSFT:
      in.steps = r.stages.at(0).steps;
      for (const auto& sub : mixture) in.per_subset_train.push_back(step_train_tokens(sub, step));
      break;
    case Strategy::SRO: {
      in.search = SearchPhase{r.search_steps, in.t_train, in.t_validation};
      std::vector<std::int64_t> series;
      Tick last = 0;
      for (const auto& p : r.search_peaks) last = std::max(last, p.tick);
      for (Tick c = 1; c <= last; ++c) {
        std::int64_t t = 0;
        for (std::size_t i = 0; i < mixture.size(); ++i)
          if (r.search_peaks[i].tick >= c) t += step_train_tokens(mixture[i], step);
        series.push_back(t);
      }
      in.active_train_series = std::move(series);
      break;
    }
    case Strategy::SoftSRO: {
      in.search = SearchPhase{r.search_steps, in.t_train, in.t_validation};
      in.steps = r.stages.at(0).steps;
      if (!r.soft) throw Error("soft SRO run carries no resampled mixture");
      in.weighted_train = detail::train_tokens(r.soft->mixture, ids, step);
      break;
    }
    case Strategy::MSFT: {
      std::vector<MsftStageTally> stages;
      for (const auto& s : r.stages)
        stages.push_back({s.steps, detail::train_tokens(mixture, s.active, step),
                          detail::eval_tokens(mixture, s.active), detail::eval_tokens(mixture, s.validated)});
      in.msft_stages = std::move(stages);
      break;
    }
  }
  return in;
}

// ---- Post-training pipeline stages ------------------------------------

enum class PipelineStage { Pretrain, Mid, SFT, DPO, RLVRGrad, RLVRRoll };
enum class RlvrAlgorithm { PPO, GRPO };

inline std::string_view to_string(PipelineStage s) {
  switch (s) {
    case PipelineStage::Pretrain: return "pretrain";
    case PipelineStage::Mid: return "mid";
    case PipelineStage::SFT: return "sft";
    case PipelineStage::DPO: return "dpo";
    case PipelineStage::RLVRGrad: return "rlvr-grad";
    case PipelineStage::RLVRRoll: return "rlvr-roll";
  }
  return "unknown";
}

inline PipelineStage parse_pipeline_stage(std::string_view s) {
  for (auto v : {PipelineStage::Pretrain, PipelineStage::Mid, PipelineStage::SFT, PipelineStage::DPO,
                 PipelineStage::RLVRGrad, PipelineStage::RLVRRoll})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown pipeline stage: " + std::string(s));
}

struct PipelineStageSpec {
  PipelineStage stage = PipelineStage::SFT;
  double theta = 0.0;
  std::optional<double> flops;    // given directly (e.g. a published figure)
  std::optional<double> tokens;   // pretrain / mid: 6 theta tokens
  double samples = 0.0;           // n_sft, n_pairs, n_grad
  double mean_length = 0.0;       // l-bar
  double epochs = 2.0;            // SFT
  double episodes = 0.0;          // RLVR roll-outs
  double sequence_length = 4096.0;
  std::optional<RlvrAlgorithm> algorithm;
};

inline double pipeline_stage_flops(const PipelineStageSpec& s) {
  if (s.flops) return *s.flops;
  if (!(s.theta > 0.0)) throw ConfigError(std::string(to_string(s.stage)) + " stage needs theta");
  switch (s.stage) {
    case PipelineStage::Pretrain:
    case PipelineStage::Mid:
      if (!s.tokens) throw ConfigError(std::string(to_string(s.stage)) + " stage needs tokens or flops");
      return 6.0 * s.theta * *s.tokens;
    case PipelineStage::SFT: return 6.0 * s.theta * s.samples * s.mean_length * s.epochs;
    case PipelineStage::DPO: return 6.0 * s.theta * s.samples * 2.0 * s.mean_length;
    case PipelineStage::RLVRRoll: return 2.0 * s.theta * s.episodes * s.sequence_length * 2.0;
    case PipelineStage::RLVRGrad:
      if (!s.algorithm) throw ConfigError("rlvr-grad stage needs algorithm (ppo or grpo)");
      return 6.0 * s.theta * s.samples * s.sequence_length * (*s.algorithm == RlvrAlgorithm::PPO ? 2.0 : 1.0);
  }
  return 0.0;
}

struct ProportionReport {
  std::vector<std::pair<PipelineStage, double>> stages;
  double total = 0.0;
  double post_total = 0.0;
  double post_over_total = 0.0;  // fractions, not percent
  double sft_over_post = 0.0;
};

inline bool is_post_training(PipelineStage s) { return s != PipelineStage::Pretrain && s != PipelineStage::Mid; }

inline ProportionReport proportion_report(const std::vector<PipelineStageSpec>& specs) {
  ProportionReport r;
  double sft = 0.0;
  for (const auto& s : specs) {
    double f = pipeline_stage_flops(s);
    r.stages.emplace_back(s.stage, f);
    r.total += f;
    if (is_post_training(s.stage)) r.post_total += f;
    if (s.stage == PipelineStage::SFT) sft += f;
  }
  r.post_over_total = r.total > 0.0 ? r.post_total / r.total : 0.0;
  r.sft_over_post = r.post_total > 0.0 ? sft / r.post_total : 0.0;
  return r;
}

// Published per-stage totals for the 7B open model family.
inline std::vector<PipelineStageSpec> published_7b_pipeline() {
  auto given = [](PipelineStage s, double f) {
    PipelineStageSpec p;
    p.stage = s;
    p.flops = f;
    return p;
  };
  return {given(PipelineStage::Pretrain, 1.64e23), given(PipelineStage::Mid, 6.30e21),
          given(PipelineStage::SFT, 2.85e19),      given(PipelineStage::DPO, 1.94e19),
          given(PipelineStage::RLVRGrad, 7.12e19), given(PipelineStage::RLVRRoll, 7.60e20)};
}

inline PipelineStageSpec pipeline_stage_from_config(const ConfigSection& sec) {
  PipelineStageSpec s;
  s.stage = parse_pipeline_stage(sec.get("stage"));
  s.theta = sec.real_or("theta", 0.0);
  if (sec.has("flops")) s.flops = sec.real("flops");
  if (sec.has("tokens")) s.tokens = sec.real("tokens");
  s.samples = sec.real_or("samples", 0.0);
  s.mean_length = sec.real_or("mean_length", 0.0);
  s.epochs = sec.real_or("epochs", 2.0);
  s.episodes = sec.real_or("episodes", 0.0);
  s.sequence_length = sec.real_or("sequence_length", 4096.0);
  if (sec.has("algorithm")) {
    auto a = sec.get("algorithm");
    if (a == "ppo") s.algorithm = RlvrAlgorithm::PPO;
    else if (a == "grpo") s.algorithm = RlvrAlgorithm::GRPO;
    else throw ConfigError("algorithm must be ppo or grpo");
  }
  return s;
}

}  // namespace msft
