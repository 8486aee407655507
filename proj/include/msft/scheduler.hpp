// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training strategies over a TrainerSession: SFT, continual SFT, SRO,
// Soft SRO and the iterative overfitting-aware search (mSFT), plus the
// peak-shift study and the forgetting/transfer decomposition.
//
// All strategies share the same bookkeeping (RunContext): every train and
// eval call is mirrored into the trace with its token tally, every grid
// point closes with a StepEnd carrying the mixture average, and the global
// best is the first grid point (in event order) with the highest average.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "msft/ckptstore.hpp"
#include "msft/core.hpp"
#include "msft/dynamics.hpp"
#include "msft/trace.hpp"
#include "msft/trainer.hpp"

namespace msft {

struct StrategyConfig {
  double eval_interval = 0.25;
  double sft_epochs = 10.0;
  double sro_search_budget = 10.0;
  double msft_budget = 3.0;
  int max_no_overfit_windows = 4;
  std::uint64_t seed = 20;  // Soft SRO resampling
  double theta = 1e9;
  double checkpoint_size = 1.0;
  std::optional<std::filesystem::path> checkpoint_dir;
};

struct PeakPoint {
  Tick tick = 0;
  double metric = 0.0;
  bool operator==(const PeakPoint&) const = default;
};

// Best record of `dataset` (optionally within one stage); ties go to the
// earliest tick.
inline PeakPoint peak_of(const CurveTable& curve, std::string_view dataset, std::optional<int> stage = std::nullopt) {
  std::optional<PeakPoint> best;
  for (const auto& r : curve.records()) {
    if (r.dataset != dataset || (stage && r.stage != *stage)) continue;
    if (!best || r.metric > best->metric || (r.metric == best->metric && r.tick < best->tick))
      best = PeakPoint{r.tick, r.metric};
  }
  if (!best) throw Error("no curve records for " + std::string(dataset));
  return *best;
}

struct EarliestPeak {
  Tick tick = 0;
  std::size_t index = 0;
  DatasetId dataset;
};

// Active dataset with the smallest c*; ties go to the lowest mixture index.
inline EarliestPeak earliest_peak(const CurveTable& curve, const MixtureSpec& mixture,
                                  const std::vector<std::size_t>& active, std::optional<int> stage = std::nullopt) {
  if (active.empty()) throw Error("earliest_peak needs a non-empty active set");
  std::optional<EarliestPeak> out;
  for (auto i : active) {
    auto p = peak_of(curve, mixture[i].id, stage);
    if (!out || p.tick < out->tick || (p.tick == out->tick && i < out->index)) out = EarliestPeak{p.tick, i, mixture[i].id};
  }
  return *out;
}

struct TaskBest {
  DatasetId dataset;
  Tick tick = 0;
  double metric = 0.0;
};

struct ExclusionRecord {
  DatasetId dataset;
  int stage = 0;
  Tick tick = 0;
  double metric = 0.0;  // at its own peak, where it was excluded
};

struct StageRecord {
  int stage = 0;
  Tick start = 0;
  Tick steps = 0;
  std::vector<DatasetId> active;
  std::vector<DatasetId> validated;  // excluded sets evaluated once at the start
  bool overfit = false;
  Tick c_min = 0;
  std::optional<DatasetId> excluded;
};

struct AveragePoint {
  int stage = 0;
  Tick tick = 0;
  double value = 0.0;
};

struct SoftMixtureEntry {
  DatasetId id;
  double target = 0.0;  // r_i
  std::int64_t copies = 0;
  std::int64_t sampled = 0;
  std::vector<std::int64_t> sample_indices;
  std::int64_t size = 0;
  double exposure = 1.0;  // size / |D_i|
};

struct SoftMixture {
  MixtureSpec mixture;
  std::vector<SoftMixtureEntry> entries;
};

struct RunResult {
  Strategy strategy = Strategy::SFT;
  double step = 0.25;
  std::string final_checkpoint_id;
  std::string global_best_checkpoint_id;
  int best_stage = 0;
  Tick best_tick = 0;
  double best_average = 0.0;
  std::vector<double> best_metrics;  // per task at the global best, mixture order
  double epochs_at_best = 0.0;        // the "Ep." column
  std::vector<TaskBest> per_task_best;
  CurveTable curve;
  RunTrace trace;
  std::vector<AveragePoint> averages;  // result segment only
  std::vector<ExclusionRecord> exclusions;
  std::vector<StageRecord> stages;
  bool window_cap_hit = false;

  // SRO / Soft SRO search phase.
  Tick search_steps = 0;
  std::vector<PeakPoint> search_peaks;
  std::optional<SoftMixture> soft;

  // Continual SFT per-task stopping epochs (relative to each phase).
  std::vector<double> stopping_epochs;
};

class RunAborted : public Error {
 public:
  RunAborted(const std::string& what, RunTrace partial) : Error(what), trace(std::move(partial)) {}
  RunTrace trace;
};

namespace detail {

class RunContext {
 public:
  RunContext(TrainerSession& session, const MixtureSpec& mixture, double step, RunResult& result)
      : session_(session), mixture_(mixture), step_(step), r_(result), latest_(mixture.size()) {}

  Tick tick() const { return tick_; }

  void session_start(const std::string& label) {
    r_.trace.append(event::SessionStart{label});
    tick_ = 0;
    best_.reset();
    r_.averages.clear();
    std::fill(latest_.begin(), latest_.end(), std::nullopt);
    check_position();
  }

  void stage_begin(int stage) { r_.trace.append(event::StageBegin{stage, tick_}); }

  double train(const std::vector<std::size_t>& active, const std::vector<double>* exposure = nullptr) {
    std::vector<ActiveDataset> req;
    std::vector<DatasetId> ids;
    std::int64_t tokens = 0;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const auto& sub = mixture_[active[k]];
      req.push_back({sub.id, exposure ? (*exposure)[k] : 1.0});
      ids.push_back(sub.id);
      tokens += step_train_tokens(sub, step_);
    }
    double loss = session_.train(req, step_);
    ++tick_;
    check_position();
    r_.trace.append(event::TrainStep{ids, tick_, tokens, loss});
    return loss;
  }

  double eval(std::size_t i, int stage) {
    const auto& sub = mixture_[i];
    double m = session_.evaluate(sub.id);
    r_.trace.append(event::Eval{sub.id, stage, tick_, m, sub.eval_tokens});
    r_.curve.add({sub.id, stage, tick_, m});
    latest_[i] = m;
    return m;
  }

  // Mixture average over the latest value of every task in this session.
  double average() const {
    double s = 0.0;
    for (std::size_t i = 0; i < latest_.size(); ++i) {
      if (!latest_[i]) throw Error("mixture average needs a value for " + mixture_[i].id);
      s += *latest_[i];
    }
    return s / static_cast<double>(latest_.size());
  }

  // Records the average at this grid point; true when it is a new global best.
  bool offer(int stage) {
    double avg = average();
    r_.averages.push_back({stage, tick_, avg});
    if (best_ && !(avg > best_->value)) return false;
    best_ = AveragePoint{stage, tick_, avg};
    best_metrics_.clear();
    for (const auto& v : latest_) best_metrics_.push_back(*v);
    return true;
  }

  void step_end(int stage) { r_.trace.append(event::StepEnd{stage, tick_}); }

  void exclude(std::size_t i, int stage) { exclude_at(i, stage, tick_); }
  void exclude_at(std::size_t i, int stage, Tick at) { r_.trace.append(event::Exclude{mixture_[i].id, stage, at}); }

  void rollback(const std::string& ckpt, const std::string& state, Tick tick) {
    session_.load(ckpt, state);
    tick_ = tick;
    check_position();
    r_.trace.append(event::Rollback{ckpt, tick});
  }

  void finish(double step) {
    if (!best_) throw Error("run produced no grid points");
    r_.best_stage = best_->stage;
    r_.best_tick = best_->tick;
    r_.best_average = best_->value;
    r_.best_metrics = best_metrics_;
    r_.epochs_at_best = static_cast<double>(best_->tick) * step;
  }

 private:
  void check_position() const {
    const double expect = static_cast<double>(tick_) * step_;
    if (std::abs(session_.position() - expect) > 1e-9 * std::max(1.0, expect))
      throw SessionError("trainer position " + std::to_string(session_.position()) + " out of sync with scheduler " +
                         std::to_string(expect));
  }

  TrainerSession& session_;
  const MixtureSpec& mixture_;
  double step_;
  RunResult& r_;
  Tick tick_ = 0;
  std::vector<std::optional<double>> latest_;
  std::optional<AveragePoint> best_;
  std::vector<double> best_metrics_;
};

inline RunResult make_result(Strategy s, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  RunResult r;
  r.strategy = s;
  r.step = cfg.eval_interval;
  r.trace.meta.strategy = std::string(to_string(s));
  r.trace.meta.seed = cfg.seed;
  r.trace.meta.eval_interval = cfg.eval_interval;
  r.trace.meta.theta = cfg.theta;
  r.trace.meta.mixture = mixture.ids();
  return r;
}

inline std::vector<std::size_t> all_indices(const MixtureSpec& m) {
  std::vector<std::size_t> v(m.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

inline void fill_per_task_best(RunResult& r, const MixtureSpec& mixture, std::optional<int> stage = std::nullopt) {
  r.per_task_best.clear();
  for (const auto& sub : mixture) {
    auto p = peak_of(r.curve, sub.id, stage);
    r.per_task_best.push_back({sub.id, p.tick, p.metric});
  }
}

// Plain joint training of every dataset for `grid.steps()` points.
inline void sft_pass(RunContext& ctx, const MixtureSpec& mixture, const ComputeGrid& grid, int stage) {
  const auto all = all_indices(mixture);
  ctx.stage_begin(stage);
  for (Tick k = 1; k <= grid.steps(); ++k) {
    ctx.train(all);
    for (auto i : all) ctx.eval(i, stage);
    ctx.offer(stage);
    ctx.step_end(stage);
  }
}

template <class F>
RunResult guarded(RunResult& r, F&& body) {
  try {
    body();
  } catch (const SessionError& e) {
    r.trace.meta.complete = false;
    throw RunAborted(e.what(), r.trace);
  }
  return std::move(r);
}

}  // namespace detail

inline RunResult run_sft(TrainerSession& session, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  ComputeGrid grid(cfg.sft_epochs, cfg.eval_interval);
  auto r = detail::make_result(Strategy::SFT, mixture, cfg);
  return detail::guarded(r, [&] {
    detail::RunContext ctx(session, mixture, grid.step(), r);
    ctx.session_start("sft");
    detail::sft_pass(ctx, mixture, grid, 0);
    ctx.finish(grid.step());
    detail::fill_per_task_best(r, mixture);
    r.final_checkpoint_id = checkpoint_id(0, grid.steps());
    r.global_best_checkpoint_id = checkpoint_id(r.best_stage, r.best_tick);
    r.stages.push_back({0, 0, grid.steps(), mixture.ids(), {}, false, grid.steps(), std::nullopt});
  });
}

// Each dataset alone, in declaration order, for the budget; every phase
// ends by reloading that dataset's peak.
inline RunResult run_continual(TrainerSession& session, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  ComputeGrid grid(cfg.msft_budget, cfg.eval_interval);
  auto r = detail::make_result(Strategy::ContinualSFT, mixture, cfg);
  return detail::guarded(r, [&] {
    CheckpointStore store(cfg.checkpoint_dir, cfg.checkpoint_size);
    store.set_sink([&r](const TraceEvent& ev) { r.trace.append(ev); });
    detail::RunContext ctx(session, mixture, grid.step(), r);
    ctx.session_start("continual");
    const auto all = detail::all_indices(mixture);
    for (std::size_t i = 0; i < mixture.size(); ++i) {
      const int stage = static_cast<int>(i);
      const Tick t0 = ctx.tick();
      ctx.stage_begin(stage);
      std::optional<PeakPoint> best;
      const auto tag = CheckpointTag::peak(mixture[i].id);
      for (Tick k = 1; k <= grid.steps(); ++k) {
        ctx.train({i});
        double own = 0.0;
        for (auto j : all) {
          double m = ctx.eval(j, stage);
          if (j == i) own = m;
        }
        ctx.offer(stage);
        if (!best || own > best->metric) {
          best = PeakPoint{ctx.tick(), own};
          if (auto prev = store.find_tag(tag)) store.remove_tag(*prev, tag);
          store.put(session.save(checkpoint_id(stage, ctx.tick())), stage, ctx.tick(), {tag});
        }
        ctx.step_end(stage);
      }
      auto id = checkpoint_id(stage, best->tick);
      store.move_tag(CheckpointTag::rollback(), id);
      ctx.rollback(id, store.get(id), best->tick);
      store.prune_end_of_stage({id});
      r.final_checkpoint_id = id;
      r.stopping_epochs.push_back(grid.epochs(best->tick - t0));
      r.stages.push_back({stage, t0, grid.steps(), {mixture[i].id}, {}, best->tick - t0 < grid.steps(), best->tick,
                          std::nullopt});
    }
    ctx.finish(grid.step());
    detail::fill_per_task_best(r, mixture);
    double s = 0.0;
    for (double e : r.stopping_epochs) s += e;
    r.epochs_at_best = s / static_cast<double>(r.stopping_epochs.size());
    r.global_best_checkpoint_id = checkpoint_id(r.best_stage, r.best_tick);
  });
}

namespace detail {

inline void search_phase(TrainerSession& session, const MixtureSpec& mixture, const StrategyConfig& cfg,
                         RunResult& r) {
  ComputeGrid grid(cfg.sro_search_budget, cfg.eval_interval);
  RunContext ctx(session, mixture, grid.step(), r);
  ctx.session_start("search");
  sft_pass(ctx, mixture, grid, 0);
  r.search_steps = grid.steps();
  for (const auto& sub : mixture) r.search_peaks.push_back(peak_of(r.curve, sub.id, 0));
}

}  // namespace detail

// Two sessions: a plain SFT search fixes every c*_i, then a fresh run drops
// each dataset once the compute reaches its c*.
inline RunResult run_sro(const SessionFactory& factory, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  auto r = detail::make_result(Strategy::SRO, mixture, cfg);
  return detail::guarded(r, [&] {
    {
      auto s1 = factory();
      detail::search_phase(*s1, mixture, cfg, r);
    }
    auto s2 = factory();
    detail::RunContext ctx(*s2, mixture, cfg.eval_interval, r);
    ctx.session_start("sro");
    ctx.stage_begin(1);
    const auto all = detail::all_indices(mixture);
    std::vector<std::size_t> active = all;
    while (!active.empty()) {
      ctx.train(active);
      for (auto i : all) ctx.eval(i, 1);
      ctx.offer(1);
      ctx.step_end(1);
      std::vector<std::size_t> keep;
      for (auto i : active) {
        if (r.search_peaks[i].tick <= ctx.tick()) {
          ctx.exclude(i, 1);
          r.exclusions.push_back({mixture[i].id, 1, ctx.tick(), r.curve.at(mixture[i].id, 1, ctx.tick()).value()});
        } else {
          keep.push_back(i);
        }
      }
      active = std::move(keep);
    }
    ctx.finish(cfg.eval_interval);
    detail::fill_per_task_best(r, mixture, 1);
    r.final_checkpoint_id = checkpoint_id(1, ctx.tick());
    r.global_best_checkpoint_id = checkpoint_id(r.best_stage, r.best_tick);
    r.stages.push_back({1, 0, ctx.tick(), mixture.ids(), {}, true, 0, std::nullopt});
  });
}

// Target sizes r_i = (sum |D|) * c_i |D_i| / sum_j c_j |D_j|, realised as
// whole copies plus a seeded without-replacement sample of the floor of the
// remainder. Peaks are given in epochs on the `step` grid.
inline SoftMixture build_soft_mixture(const MixtureSpec& mixture, const std::vector<double>& peaks,
                                      std::uint64_t seed, double step = 0.25) {
  if (peaks.size() != mixture.size()) throw ConfigError("one peak per dataset required");
  std::vector<std::int64_t> ticks;
  for (double c : peaks) {
    if (!(c > 0.0)) throw ConfigError("soft mixture needs every c* > 0");
    ticks.push_back(ticks_for(c, step));
  }
  using wide = __int128;
  wide z = 0;
  for (std::size_t i = 0; i < mixture.size(); ++i) z += static_cast<wide>(ticks[i]) * mixture[i].size;
  const wide total = mixture.total_size();
  SoftMixture out;
  std::vector<SubDatasetSpec> subs;
  for (std::size_t i = 0; i < mixture.size(); ++i) {
    const auto& sub = mixture[i];
    const wide num = total * ticks[i] * sub.size;
    SoftMixtureEntry e;
    e.id = sub.id;
    e.target = static_cast<double>(num) / static_cast<double>(z);
    const auto whole = static_cast<std::int64_t>(num / z);  // floor(r_i)
    e.copies = whole / sub.size;
    e.sampled = whole - e.copies * sub.size;
    Rng rng(detail::splitmix64(seed ^ detail::splitmix64(i + 1)));
    std::vector<std::int64_t> pool(static_cast<std::size_t>(sub.size));
    for (std::int64_t k = 0; k < sub.size; ++k) pool[static_cast<std::size_t>(k)] = k;
    for (std::int64_t k = 0; k < e.sampled; ++k) {
      auto pick = static_cast<std::size_t>(k) + rng.below(static_cast<std::uint64_t>(sub.size - k));
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick]);
    }
    e.sample_indices.assign(pool.begin(), pool.begin() + e.sampled);
    std::sort(e.sample_indices.begin(), e.sample_indices.end());
    e.size = whole;
    if (e.size <= 0) throw ConfigError("soft mixture leaves no samples of " + sub.id);
    e.exposure = static_cast<double>(e.size) / static_cast<double>(sub.size);
    SubDatasetSpec s = sub;
    s.size = e.size;
    s.train_tokens_per_epoch = static_cast<std::int64_t>(
        (static_cast<wide>(sub.train_tokens_per_epoch) * e.size + sub.size / 2) / sub.size);
    subs.push_back(std::move(s));
    out.entries.push_back(std::move(e));
  }
  out.mixture = MixtureSpec(std::move(subs));
  return out;
}

inline RunResult run_soft_sro(const SessionFactory& factory, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  auto r = detail::make_result(Strategy::SoftSRO, mixture, cfg);
  return detail::guarded(r, [&] {
    {
      auto s1 = factory();
      detail::search_phase(*s1, mixture, cfg, r);
    }
    std::vector<double> peaks;
    for (const auto& p : r.search_peaks) peaks.push_back(static_cast<double>(p.tick) * cfg.eval_interval);
    r.soft = build_soft_mixture(mixture, peaks, cfg.seed, cfg.eval_interval);
    std::vector<double> exposure;
    for (const auto& e : r.soft->entries) exposure.push_back(e.exposure);

    ComputeGrid grid(cfg.sro_search_budget, cfg.eval_interval);
    auto s2 = factory();
    detail::RunContext ctx(*s2, r.soft->mixture, grid.step(), r);
    ctx.session_start("soft_sro");
    ctx.stage_begin(1);
    const auto all = detail::all_indices(mixture);
    for (Tick k = 1; k <= grid.steps(); ++k) {
      ctx.train(all, &exposure);
      for (auto i : all) ctx.eval(i, 1);
      ctx.offer(1);
      ctx.step_end(1);
    }
    ctx.finish(grid.step());
    detail::fill_per_task_best(r, mixture, 1);
    r.final_checkpoint_id = checkpoint_id(1, grid.steps());
    r.global_best_checkpoint_id = checkpoint_id(r.best_stage, r.best_tick);
    r.stages.push_back({1, 0, grid.steps(), mixture.ids(), {}, false, grid.steps(), std::nullopt});
  });
}

// Iterative roll-out / roll-back search. Each stage trains the active set
// for the budget from the current rollback base, keeping one checkpoint per
// running per-dataset peak; the earliest peak inside the window is excluded
// and the model reverts to it. A window in which no active dataset peaked
// early simply becomes the new base.
inline RunResult run_msft(TrainerSession& session, const MixtureSpec& mixture, const StrategyConfig& cfg) {
  ComputeGrid grid(cfg.msft_budget, cfg.eval_interval);
  if (cfg.max_no_overfit_windows < 1) throw ConfigError("max_no_overfit_windows must be >= 1");
  auto r = detail::make_result(Strategy::MSFT, mixture, cfg);
  return detail::guarded(r, [&] {
    CheckpointStore store(cfg.checkpoint_dir, cfg.checkpoint_size);
    store.set_sink([&r](const TraceEvent& ev) { r.trace.append(ev); });
    detail::RunContext ctx(session, mixture, grid.step(), r);
    ctx.session_start("msft");

    std::vector<std::size_t> active = detail::all_indices(mixture);
    std::vector<std::size_t> excluded;
    std::string theta_hat;
    std::string theta_star;
    int windows = 0;

    for (int stage = 0; !active.empty(); ++stage) {
      const Tick t0 = ctx.tick();
      ctx.stage_begin(stage);
      StageRecord rec;
      rec.stage = stage;
      rec.start = t0;
      rec.steps = grid.steps();
      for (auto i : active) rec.active.push_back(mixture[i].id);
      for (auto e : excluded) {
        ctx.eval(e, stage);
        rec.validated.push_back(mixture[e].id);
      }

      std::vector<std::optional<PeakPoint>> best(mixture.size());
      for (Tick k = 1; k <= grid.steps(); ++k) {
        ctx.train(active);
        std::set<CheckpointTag> tags;
        for (auto i : active) {
          double m = ctx.eval(i, stage);
          if (!best[i] || m > best[i]->metric) {
            best[i] = PeakPoint{ctx.tick(), m};
            tags.insert(CheckpointTag::peak(mixture[i].id));
          }
        }
        const bool star = ctx.offer(stage);
        if (star) tags.insert(CheckpointTag::best());
        if (!tags.empty()) {
          for (const auto& t : tags)
            if (auto prev = store.find_tag(t)) store.remove_tag(*prev, t);
          auto id = store.put(session.save(checkpoint_id(stage, ctx.tick())), stage, ctx.tick(), tags);
          if (star) theta_star = id;
        }
        ctx.step_end(stage);
      }

      std::size_t kmin = active.front();
      for (auto i : active)
        if (best[i]->tick < best[kmin]->tick) kmin = i;
      const Tick c_min = best[kmin]->tick;
      const auto base = checkpoint_id(stage, c_min);
      rec.c_min = c_min;
      store.move_tag(CheckpointTag::rollback(), base);
      theta_hat = base;

      if (c_min - t0 == grid.steps()) {
        // Nothing overfit inside the window; the model at C is the new base.
        rec.overfit = false;
        r.stages.push_back(std::move(rec));
        store.prune_end_of_stage({theta_hat, theta_star});
        if (++windows >= cfg.max_no_overfit_windows) {
          r.window_cap_hit = true;
          break;
        }
        continue;
      }

      rec.overfit = true;
      rec.excluded = mixture[kmin].id;
      ctx.exclude_at(kmin, stage, c_min);
      r.exclusions.push_back({mixture[kmin].id, stage, c_min, best[kmin]->metric});
      ctx.rollback(base, store.get(base), c_min);
      active.erase(std::find(active.begin(), active.end(), kmin));
      excluded.push_back(kmin);
      r.stages.push_back(std::move(rec));
      store.prune_end_of_stage({theta_hat, theta_star});
    }

    ctx.finish(grid.step());
    detail::fill_per_task_best(r, mixture);
    r.final_checkpoint_id = theta_hat;
    r.global_best_checkpoint_id = theta_star;
  });
}

struct DeltaEntry {
  DatasetId dataset;
  double c_star = 0.0;        // full mixture
  double c_star_after = 0.0;  // after excluding the bifurcation dataset
  double shift = 0.0;
};

struct DeltaStudy {
  DatasetId bifurcation;
  double bifurcation_epochs = 0.0;
  std::vector<DeltaEntry> entries;
  double mean_abs_shift = 0.0;
  RunTrace full;
  RunTrace branch;
};

// Trains the full mixture until the first dataset k peaks, then compares
// every other dataset's optimum on D against D \ {k}.
inline DeltaStudy delta_cstar_study(const SessionFactory& factory, const MixtureSpec& mixture,
                                    const ComputeGrid& grid, const StrategyConfig& cfg = {}) {
  if (mixture.size() < 2) throw ConfigError("peak-shift study needs at least two datasets");
  StrategyConfig c = cfg;
  c.eval_interval = grid.step();
  auto a = detail::make_result(Strategy::SFT, mixture, c);
  {
    auto s = factory();
    detail::RunContext ctx(*s, mixture, grid.step(), a);
    ctx.session_start("full");
    detail::sft_pass(ctx, mixture, grid, 0);
  }
  const auto all = detail::all_indices(mixture);
  auto first = earliest_peak(a.curve, mixture, all);
  if (first.tick == grid.steps()) throw Error("no bifurcation point");

  auto b = detail::make_result(Strategy::SFT, mixture, c);
  {
    auto s = factory();
    detail::RunContext ctx(*s, mixture, grid.step(), b);
    ctx.session_start("branch");
    ctx.stage_begin(0);
    std::vector<std::size_t> rest;
    for (auto i : all)
      if (i != first.index) rest.push_back(i);
    for (Tick k = 1; k <= grid.steps(); ++k) {
      const bool joint = k <= first.tick;
      ctx.train(joint ? all : rest);
      for (auto i : joint ? all : rest) ctx.eval(i, 0);
      ctx.step_end(0);
    }
  }

  DeltaStudy out;
  out.bifurcation = first.dataset;
  out.bifurcation_epochs = grid.epochs(first.tick);
  double sum = 0.0;
  for (auto i : all) {
    if (i == first.index) continue;
    DeltaEntry e;
    e.dataset = mixture[i].id;
    e.c_star = grid.epochs(peak_of(a.curve, e.dataset).tick);
    e.c_star_after = grid.epochs(peak_of(b.curve, e.dataset).tick);
    e.shift = e.c_star_after - e.c_star;
    sum += std::abs(e.shift);
    out.entries.push_back(e);
  }
  out.mean_abs_shift = sum / static_cast<double>(out.entries.size());
  out.full = std::move(a.trace);
  out.branch = std::move(b.trace);
  return out;
}

struct DecompositionEntry {
  DatasetId dataset;
  double at_exclusion = 0.0;
  double at_best = 0.0;
  double value = 0.0;  // at_best - at_exclusion
};

// Per dataset excluded before the global-best stage: its metric as used at
// the global best minus its metric where it was excluded.
inline std::vector<DecompositionEntry> forgetting_decomposition(const RunResult& r) {
  if (r.strategy != Strategy::MSFT) throw Error("decomposition needs an mSFT run");
  const StageRecord* best_stage = nullptr;
  for (const auto& s : r.stages)
    if (s.stage == r.best_stage) best_stage = &s;
  if (!best_stage) throw Error("global best stage missing from run");
  std::vector<DecompositionEntry> out;
  for (const auto& ex : r.exclusions) {
    if (ex.stage >= r.best_stage) continue;
    auto v = r.curve.at(ex.dataset, r.best_stage, best_stage->start);
    if (!v) throw Error("excluded dataset " + ex.dataset + " was not validated at the best stage");
    out.push_back({ex.dataset, ex.metric, *v, *v - ex.metric});
  }
  return out;
}

}  // namespace msft
