// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic synthetic learning dynamics standing in for real training.
//
// Each task follows an asymmetric unimodal accuracy curve in its own
// "effective compute" (epochs of that task actually trained). The rising
// flank is a renormalised Gaussian so the curve starts exactly at the base
// metric; the decay flank is a plain Gaussian with its own rate:
//
//   e >= p : base + (peak - base) * g_decay(e)
//   e <  p : base + (peak - base) * (g_rise(e) - g_rise(0)) / (1 - g_rise(0))
//   g_r(e) = exp(-(e - p)^2 * r)
//
// Mixture changes move peaks. While task j trains, its peak is shifted by
// sum_k coupling[k][j] * (1 - exposure_k), so dropping task k (exposure 0)
// shifts j by exactly coupling[k][j] and shifts compose additively.
//
// A shift does not redraw the curve. The task keeps its current progress u
// along the unshifted curve and only the remaining distance to the peak is
// stretched, so the metric stays continuous across mixture changes:
//
//   e <  P : u = u_a + (e - e_a) * (p - u_a) / (P - e_a)
//   e >= P : u = p + (e - P)
//
// with (e_a, u_a) the anchor set at the last shift and P the shifted peak.
// A negative shift can at most halve the remaining distance; shifts that
// arrive after the peak are ignored. A task that stops training keeps its
// effective compute, so its metric is frozen apart from an optional linear
// drift per epoch trained on other tasks.
//
// Subsampling a task (exposure below 1) means fewer distinct examples, so
// its gain over base is scaled by min(exposure, 1)^coverage_exponent, using
// the exposure of its latest training step. Whole copies add no new data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "msft/config.hpp"
#include "msft/core.hpp"

namespace msft {

struct TaskCurveParams {
  double base_metric = 0.0;
  double peak_metric = 1.0;
  double peak_location = 1.0;
  double rise_rate = 1.0;
  double decay_rate = 0.0;
  bool operator==(const TaskCurveParams&) const = default;
};

struct LossParams {
  double initial = 2.0;
  double floor = 0.5;
  double decay = 0.5;
  bool operator==(const LossParams&) const = default;
};

struct DynamicsConfig {
  std::vector<DatasetId> tasks;
  std::vector<TaskCurveParams> curves;
  std::vector<LossParams> loss;
  // coupling[k][j]: peak shift of j (epochs) when k leaves the mixture.
  std::vector<std::vector<double>> coupling;
  std::uint64_t seed = 20;
  double drift_slope = 0.0;
  double jitter = 0.0;
  double loss_step_drop = 0.0;
  double coverage_exponent = 0.0;

  bool operator==(const DynamicsConfig&) const = default;

  std::size_t size() const { return tasks.size(); }

  std::size_t index_of(std::string_view id) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (tasks[i] == id) return i;
    throw Error("dynamics config has no task '" + std::string(id) + "' (mixture/config mismatch)");
  }

  double shift(std::size_t excluded, std::size_t remaining) const {
    if (coupling.empty()) return 0.0;
    return coupling.at(excluded).at(remaining);
  }

  void validate() const {
    const auto n = tasks.size();
    if (n == 0) throw ConfigError("dynamics config has no tasks");
    if (curves.size() != n || loss.size() != n) throw ConfigError("dynamics config: one curve per task required");
    if (!(coverage_exponent >= 0.0)) throw ConfigError("coverage exponent must be >= 0");
    if (!coupling.empty()) {
      if (coupling.size() != n) throw ConfigError("coupling matrix has wrong size");
      for (const auto& row : coupling)
        if (row.size() != n) throw ConfigError("coupling matrix has wrong size");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = curves[i];
      if (!(c.base_metric >= 0.0 && c.base_metric < 1.0)) throw ConfigError("base metric outside [0,1): " + tasks[i]);
      if (!(c.peak_metric > c.base_metric && c.peak_metric <= 1.0))
        throw ConfigError("peak metric must exceed base and be <= 1: " + tasks[i]);
      if (!(c.peak_location > 0.0)) throw ConfigError("peak location must be > 0: " + tasks[i]);
      if (!(c.rise_rate > 0.0)) throw ConfigError("rise rate must be > 0: " + tasks[i]);
      if (!(c.decay_rate >= 0.0)) throw ConfigError("decay rate must be >= 0: " + tasks[i]);
    }
  }

  // All tasks in mixture order must be present, in the same order.
  void check_matches(const MixtureSpec& mixture) const {
    if (mixture.size() != tasks.size()) throw ConfigError("dynamics config does not match the mixture size");
    for (std::size_t i = 0; i < tasks.size(); ++i)
      if (mixture[i].id != tasks[i]) throw ConfigError("dynamics task order does not match mixture at " + tasks[i]);
  }
};

struct TaskExposure {
  double effective = 0.0;  // epochs of this task trained
  double shift = 0.0;      // summed coupling shift currently applied
  double offset = 0.0;     // shifted peak minus unshifted peak, after clamping
  double anchor_e = 0.0;
  double anchor_u = 0.0;
  double idle = 0.0;       // epochs trained on other tasks since this one last trained
  double coverage = 1.0;   // min(exposure, 1) of the latest training step
  bool excluded = false;
  bool operator==(const TaskExposure&) const = default;
};

struct ExclusionEntry {
  std::size_t task = 0;
  Tick tick = 0;
  bool operator==(const ExclusionEntry&) const = default;
};

struct SimState {
  Tick tick = 0;
  std::vector<TaskExposure> tasks;
  std::vector<ExclusionEntry> exclusions;
  bool operator==(const SimState&) const = default;

  static SimState fresh(std::size_t n) {
    SimState s;
    s.tasks.resize(n);
    return s;
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// Uniform reals from the raw mt19937_64 stream. std::uniform_real_distribution
// is implementation-defined, this is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

inline double curve_value(const TaskCurveParams& p, double peak_location, double e) {
  const double span = p.peak_metric - p.base_metric;
  const double loc = std::max(peak_location, 1e-9);
  if (e >= loc) return p.base_metric + span * std::exp(-(e - loc) * (e - loc) * p.decay_rate);
  const double g0 = std::exp(-loc * loc * p.rise_rate);
  if (1.0 - g0 < 1e-12) return p.base_metric + span * std::max(e, 0.0) / loc;
  const double g = std::exp(-(e - loc) * (e - loc) * p.rise_rate);
  return p.base_metric + span * (g - g0) / (1.0 - g0);
}

// Position along the unshifted curve.
inline double progress(const TaskCurveParams& c, const TaskExposure& x, double e) {
  const double p = c.peak_location;
  const double target = p + x.offset;
  if (e >= target) return p + (e - target);
  if (target - x.anchor_e == p - x.anchor_u) return x.anchor_u + (e - x.anchor_e);
  return x.anchor_u + (e - x.anchor_e) * (p - x.anchor_u) / (target - x.anchor_e);
}

inline void apply_shift(const TaskCurveParams& c, TaskExposure& x, double shift) {
  const double change = shift - x.shift;
  x.shift = shift;
  if (change == 0.0) return;
  const double target = c.peak_location + x.offset;
  const double e = x.effective;
  if (e >= target) return;
  const double u = progress(c, x, e);
  const double remaining = target - e;
  const double next = std::max(remaining + change, remaining / 2.0);
  x.anchor_e = e;
  x.anchor_u = u;
  x.offset = e + next - c.peak_location;
}

inline double metric_at(const DynamicsConfig& cfg, std::size_t task, const TaskExposure& x) {
  const auto& p = cfg.curves.at(task);
  double v = curve_value(p, p.peak_location, progress(p, x, x.effective));
  if (cfg.coverage_exponent > 0.0 && x.coverage < 1.0)
    v = p.base_metric + (v - p.base_metric) * std::pow(x.coverage, cfg.coverage_exponent);
  v += cfg.drift_slope * x.idle;
  if (cfg.jitter > 0.0 && x.effective > 0.0) {
    std::uint64_t bits = 0;
    const double e = x.effective;
    static_assert(sizeof bits == sizeof e);
    std::memcpy(&bits, &e, sizeof bits);
    auto h = detail::splitmix64(cfg.seed ^ detail::splitmix64(task + 1) ^ bits);
    v += cfg.jitter * (static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0);
  }
  return std::clamp(v, 0.0, 1.0);
}

inline double metric_at(const DynamicsConfig& cfg, std::string_view task, const TaskExposure& x) {
  return metric_at(cfg, cfg.index_of(task), x);
}

// Mean per-task training loss, minus a step drop per recorded exclusion.
inline double loss_at(const DynamicsConfig& cfg, const SimState& state) {
  double sum = 0.0;
  for (std::size_t i = 0; i < state.tasks.size(); ++i) {
    const auto& l = cfg.loss.at(i);
    sum += l.floor + (l.initial - l.floor) * std::exp(-l.decay * state.tasks[i].effective);
  }
  double v = sum / static_cast<double>(state.tasks.size());
  v -= cfg.loss_step_drop * static_cast<double>(state.exclusions.size());
  return std::max(v, 0.0);
}

// One training step of `delta` ticks. exposure[i] is the relative exposure
// of task i (0 = not trained this step, 1 = one pass per mixture epoch).
inline void advance(const DynamicsConfig& cfg, SimState& state, std::span<const double> exposure, Tick delta,
                    double step) {
  const auto n = state.tasks.size();
  if (exposure.size() != n) throw Error("exposure vector does not match task count");
  const double dc = static_cast<double>(delta) * step;
  for (std::size_t j = 0; j < n; ++j) {
    if (exposure[j] <= 0.0) continue;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (k != j) s += cfg.shift(k, j) * (1.0 - exposure[k]);
    apply_shift(cfg.curves[j], state.tasks[j], s);
  }
  for (std::size_t j = 0; j < n; ++j) {
    auto& t = state.tasks[j];
    if (exposure[j] > 0.0) {
      t.excluded = false;
      t.idle = 0.0;
      t.coverage = std::min(exposure[j], 1.0);
      t.effective += exposure[j] * dc;
    } else if (t.effective > 0.0) {
      if (!t.excluded) {
        t.excluded = true;
        state.exclusions.push_back({j, state.tick});
      }
      t.idle += dc;
    }
  }
  state.tick += delta;
}

struct PeakSpread {
  double min = 0.5;
  double max = 3.0;
};

struct SampleOptions {
  double grid_step = 0.25;
  double max_compute = 10.0;
  // Calibration target for the mean |peak shift| caused by excluding the
  // earliest-peaking task. Zero gives an all-zero coupling matrix.
  double mean_abs_shift = 0.91;
  bool calibrate = true;
  double drift_slope = 0.0;
  double loss_step_drop = 0.0;
  // Gain over base grows with the square root of the distinct-example share.
  double coverage_exponent = 0.5;
  // Rise rate is kappa / p^2 with kappa drawn from this range, so every
  // curve gains a similar share of its improvement by half its peak
  // compute regardless of where the peak sits.
  double rise_kappa_min = 0.5;
  double rise_kappa_max = 1.5;
  double decay_min = 0.05;
  double decay_max = 0.30;
};

inline DynamicsConfig sample_dynamics(std::uint64_t seed, const MixtureSpec& mixture, PeakSpread spread,
                                      const SampleOptions& opt = {}) {
  const double step = opt.grid_step;
  if (!(step > 0.0)) throw ConfigError("grid step must be > 0");
  if (!(spread.min >= step - 1e-12) || !(spread.max <= opt.max_compute + 1e-12) || spread.min > spread.max)
    throw ConfigError("peak spread must lie within [grid step, C_max] and be ordered");
  if (opt.mean_abs_shift < 0.0) throw ConfigError("mean_abs_shift must be >= 0");

  const auto n = mixture.size();
  Rng rng(seed);
  DynamicsConfig cfg;
  cfg.seed = seed;
  cfg.drift_slope = opt.drift_slope;
  cfg.loss_step_drop = opt.loss_step_drop;
  cfg.coverage_exponent = opt.coverage_exponent;
  cfg.tasks = mixture.ids();

  // Grid-aligned peak ticks, distinct whenever the spread allows it.
  const Tick lo = static_cast<Tick>(std::ceil(spread.min / step - 1e-9));
  const Tick hi = static_cast<Tick>(std::floor(spread.max / step + 1e-9));
  std::vector<Tick> pool;
  for (Tick t = lo; t <= hi; ++t) pool.push_back(t);
  std::vector<Tick> peaks(n);
  if (pool.size() >= n) {
    for (std::size_t i = 0; i < n; ++i) {
      auto pick = i + rng.below(pool.size() - i);
      std::swap(pool[i], pool[pick]);
      peaks[i] = pool[i];
    }
  } else {
    for (auto& p : peaks) p = pool[rng.below(pool.size())];
  }

  for (std::size_t i = 0; i < n; ++i) {
    TaskCurveParams c;
    c.peak_location = static_cast<double>(peaks[i]) * step;
    c.base_metric = rng.uniform(0.15, 0.45);
    c.peak_metric = std::min(0.95, c.base_metric + rng.uniform(0.15, 0.40));
    c.rise_rate = rng.uniform(opt.rise_kappa_min, opt.rise_kappa_max) / (c.peak_location * c.peak_location);
    c.decay_rate = rng.uniform(opt.decay_min, opt.decay_max);
    cfg.curves.push_back(c);
    LossParams l;
    l.initial = rng.uniform(1.6, 2.4);
    l.floor = rng.uniform(0.2, 0.6);
    l.decay = rng.uniform(0.3, 0.9);
    cfg.loss.push_back(l);
  }

  cfg.coupling.assign(n, std::vector<double>(n, 0.0));
  if (opt.mean_abs_shift > 0.0) {
    auto allowed = [&](std::size_t k, std::size_t j, double delta) {
      const double pk = cfg.curves[k].peak_location;
      const double pj = cfg.curves[j].peak_location;
      if (pj + delta < step - 1e-12) return false;
      if (pj > pk) {
        // Excluding k at its peak must leave j at least one step and at
        // least half of its remaining distance.
        const double keep = std::max(step, std::ceil((pj - pk) / 2.0 / step - 1e-9) * step);
        if (pj + delta < pk + keep - 1e-12) return false;
      }
      return true;
    };
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        if (k == j) continue;
        double mag = std::round(rng.uniform(0.0, 2.0 * opt.mean_abs_shift) / step) * step;
        double delta = rng.uniform() < 0.5 ? -mag : mag;
        if (!allowed(k, j, delta)) delta = mag;
        cfg.coupling[k][j] = delta;
      }
    }
    if (opt.calibrate && n >= 2) {
      // Earliest-peaking task, lowest index on ties.
      std::size_t first = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (cfg.curves[i].peak_location < cfg.curves[first].peak_location) first = i;
      auto& row = cfg.coupling[first];
      const double target = opt.mean_abs_shift * static_cast<double>(n - 1);
      auto total = [&] {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          if (j != first) s += std::abs(row[j]);
        return s;
      };
      for (int guard = 0; guard < 100000 && std::abs(total() - target) > step / 2.0; ++guard) {
        const bool grow = total() < target;
        const std::size_t j = static_cast<std::size_t>(guard) % n;
        if (j == first) continue;
        const double sign = row[j] < 0.0 ? -1.0 : 1.0;
        const double mag = std::abs(row[j]);
        if (grow) {
          if (allowed(first, j, sign * (mag + step))) row[j] = sign * (mag + step);
          else row[j] = mag + step;
        } else if (mag >= step - 1e-12) {
          row[j] = sign * (mag - step);
        }
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline ConfigDocument dynamics_to_document(const DynamicsConfig& cfg) {
  ConfigDocument doc;
  auto& top = doc.section("dynamics");
  top.set("seed", static_cast<std::uint64_t>(cfg.seed));
  top.set("drift_slope", cfg.drift_slope);
  top.set("jitter", cfg.jitter);
  top.set("loss_step_drop", cfg.loss_step_drop);
  top.set("coverage_exponent", cfg.coverage_exponent);
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    auto& s = doc.section("task." + cfg.tasks[i]);
    const auto& c = cfg.curves[i];
    s.set("base", c.base_metric);
    s.set("peak", c.peak_metric);
    s.set("peak_location", c.peak_location);
    s.set("rise", c.rise_rate);
    s.set("decay", c.decay_rate);
    const auto& l = cfg.loss[i];
    s.set("loss_initial", l.initial);
    s.set("loss_floor", l.floor);
    s.set("loss_decay", l.decay);
  }
  auto& cs = doc.section("coupling");
  for (std::size_t k = 0; k < cfg.coupling.size(); ++k)
    for (std::size_t j = 0; j < cfg.coupling[k].size(); ++j)
      if (cfg.coupling[k][j] != 0.0) cs.set(cfg.tasks[k] + " -> " + cfg.tasks[j], cfg.coupling[k][j]);
  return doc;
}

inline std::string dynamics_to_text(const DynamicsConfig& cfg) { return dynamics_to_document(cfg).to_string(); }

inline DynamicsConfig dynamics_from_document(const ConfigDocument& doc) {
  DynamicsConfig cfg;
  const auto& top = doc.require("dynamics");
  cfg.seed = static_cast<std::uint64_t>(top.integer_or("seed", 20));
  cfg.drift_slope = top.real_or("drift_slope", 0.0);
  cfg.jitter = top.real_or("jitter", 0.0);
  cfg.loss_step_drop = top.real_or("loss_step_drop", 0.0);
  cfg.coverage_exponent = top.real_or("coverage_exponent", 0.0);
  for (const auto* s : doc.with_prefix("task")) {
    cfg.tasks.push_back(s->name().substr(5));
    TaskCurveParams c;
    c.base_metric = s->real("base");
    c.peak_metric = s->real("peak");
    c.peak_location = s->real("peak_location");
    c.rise_rate = s->real("rise");
    c.decay_rate = s->real_or("decay", 0.0);
    cfg.curves.push_back(c);
    LossParams l;
    l.initial = s->real_or("loss_initial", l.initial);
    l.floor = s->real_or("loss_floor", l.floor);
    l.decay = s->real_or("loss_decay", l.decay);
    cfg.loss.push_back(l);
  }
  const auto n = cfg.tasks.size();
  cfg.coupling.assign(n, std::vector<double>(n, 0.0));
  if (const auto* cs = doc.find("coupling")) {
    for (const auto& [key, value] : cs->entries()) {
      auto arrow = key.find("->");
      if (arrow == std::string::npos) throw ConfigError("coupling key must be '<excluded> -> <remaining>': " + key);
      auto k = cfg.index_of(trim(std::string_view(key).substr(0, arrow)));
      auto j = cfg.index_of(trim(std::string_view(key).substr(arrow + 2)));
      if (k == j) throw ConfigError("coupling of a task onto itself: " + key);
      cfg.coupling[k][j] = parse_real(value, key);
    }
  }
  cfg.validate();
  return cfg;
}

inline DynamicsConfig dynamics_from_text(const std::string& text) {
  return dynamics_from_document(ConfigDocument::parse(text));
}

}  // namespace msft
