// SPDX-License-Identifier: Apache-2.0
#pragma once

// Domain types shared by every module: the dataset mixture, the compute
// grid, evaluation records and the curve table built from them.
//
// Compute is measured in fractional epochs of the full mixture. Internally
// every compute point is an integer number of grid ticks (tick * step =
// epochs), which keeps argmax decisions and token tallies exact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace msft {

using DatasetId = std::string;
using Tick = std::int64_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SubDatasetSpec {
  DatasetId id;
  std::string name;
  std::int64_t size = 0;
  double weight = 1.0;
  std::int64_t train_tokens_per_epoch = 0;
  std::int64_t eval_tokens = 0;
};

class MixtureSpec {
 public:
  MixtureSpec() = default;

  explicit MixtureSpec(std::vector<SubDatasetSpec> subs) : subs_(std::move(subs)) {
    if (subs_.empty()) throw ConfigError("mixture must contain at least one sub-dataset");
    std::set<DatasetId> seen;
    for (const auto& s : subs_) {
      if (s.id.empty()) throw ConfigError("sub-dataset id must not be empty");
      if (!seen.insert(s.id).second) throw ConfigError("duplicate sub-dataset id: " + s.id);
      if (s.size <= 0) throw ConfigError("sub-dataset size must be > 0: " + s.id);
      if (!(s.weight > 0.0) || !std::isfinite(s.weight))
        throw ConfigError("sub-dataset weight must be > 0: " + s.id);
      if (s.train_tokens_per_epoch < 0 || s.eval_tokens < 0)
        throw ConfigError("token tallies must be >= 0: " + s.id);
    }
  }

  std::size_t size() const { return subs_.size(); }
  bool empty() const { return subs_.empty(); }
  const SubDatasetSpec& operator[](std::size_t i) const { return subs_.at(i); }
  const std::vector<SubDatasetSpec>& subs() const { return subs_; }
  auto begin() const { return subs_.begin(); }
  auto end() const { return subs_.end(); }

  std::optional<std::size_t> index_of(std::string_view id) const {
    for (std::size_t i = 0; i < subs_.size(); ++i)
      if (subs_[i].id == id) return i;
    return std::nullopt;
  }

  std::size_t require_index(std::string_view id) const {
    auto idx = index_of(id);
    if (!idx) throw Error("unknown dataset: " + std::string(id));
    return *idx;
  }

  std::vector<DatasetId> ids() const {
    std::vector<DatasetId> out;
    out.reserve(subs_.size());
    for (const auto& s : subs_) out.push_back(s.id);
    return out;
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& s : subs_) n += s.size;
    return n;
  }

 private:
  std::vector<SubDatasetSpec> subs_;
};

// Tokens consumed by one grid step of training on one sub-dataset.
inline std::int64_t step_train_tokens(const SubDatasetSpec& s, double step) {
  return std::llround(static_cast<double>(s.train_tokens_per_epoch) * step);
}

inline std::int64_t ticks_for(double epochs, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("eval interval must be > 0");
  const double ratio = epochs / step;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, std::abs(ratio)))
    throw ConfigError("compute " + std::to_string(epochs) + " is not a multiple of the grid step " +
                      std::to_string(step));
  return static_cast<std::int64_t>(rounded);
}

class ComputeGrid {
 public:
  explicit ComputeGrid(double budget, double eval_interval = 0.25) : step_(eval_interval) {
    if (!(budget > 0.0) || !std::isfinite(budget)) throw ConfigError("compute budget must be > 0");
    steps_ = ticks_for(budget, eval_interval);
    if (steps_ < 1) throw ConfigError("compute budget smaller than one grid step");
  }

  double budget() const { return epochs(steps_); }
  double step() const { return step_; }
  Tick steps() const { return steps_; }
  double epochs(Tick tick) const { return static_cast<double>(tick) * step_; }
  Tick to_ticks(double epochs) const { return ticks_for(epochs, step_); }

  // Same step, different budget.
  ComputeGrid with_budget(double budget) const { return ComputeGrid(budget, step_); }

 private:
  double step_;
  Tick steps_ = 0;
};

// {Δ, 2Δ, …, C}
inline std::vector<double> grid_points(const ComputeGrid& grid) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(grid.steps()));
  for (Tick t = 1; t <= grid.steps(); ++t) out.push_back(grid.epochs(t));
  return out;
}

struct EvalRecord {
  DatasetId dataset;
  int stage = 0;
  Tick tick = 0;
  double metric = 0.0;
};

// The measured acc(D_i, c) surface. Records are kept in insertion order;
// within one (stage, dataset) series ticks must be strictly increasing and
// gap-free.
class CurveTable {
 public:
  void add(EvalRecord rec) {
    if (!std::isfinite(rec.metric)) throw Error("non-finite metric for " + rec.dataset);
    auto key = std::make_pair(rec.stage, rec.dataset);
    auto it = last_tick_.find(key);
    if (it != last_tick_.end() && rec.tick != it->second + 1)
      throw Error("curve for " + rec.dataset + " is not gap-free at tick " + std::to_string(rec.tick));
    last_tick_[key] = rec.tick;
    records_.push_back(std::move(rec));
  }

  const std::vector<EvalRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }

  std::vector<EvalRecord> series(std::string_view dataset) const {
    std::vector<EvalRecord> out;
    for (const auto& r : records_)
      if (r.dataset == dataset) out.push_back(r);
    return out;
  }

  std::vector<EvalRecord> series(std::string_view dataset, int stage) const {
    std::vector<EvalRecord> out;
    for (const auto& r : records_)
      if (r.dataset == dataset && r.stage == stage) out.push_back(r);
    return out;
  }

  std::optional<double> at(std::string_view dataset, int stage, Tick tick) const {
    for (const auto& r : records_)
      if (r.dataset == dataset && r.stage == stage && r.tick == tick) return r.metric;
    return std::nullopt;
  }

  // Drop every record of `stage` beyond `tick`.
  void truncate_stage(int stage, Tick tick) {
    std::erase_if(records_, [&](const EvalRecord& r) { return r.stage == stage && r.tick > tick; });
    last_tick_.clear();
    for (const auto& r : records_) last_tick_[{r.stage, r.dataset}] = r.tick;
  }

 private:
  std::vector<EvalRecord> records_;
  std::map<std::pair<int, DatasetId>, Tick> last_tick_;
};

enum class Strategy { SFT, ContinualSFT, SRO, SoftSRO, MSFT };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::SFT: return "sft";
    case Strategy::ContinualSFT: return "continual";
    case Strategy::SRO: return "sro";
    case Strategy::SoftSRO: return "soft_sro";
    case Strategy::MSFT: return "msft";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::SFT, Strategy::ContinualSFT, Strategy::SRO, Strategy::SoftSRO, Strategy::MSFT})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown strategy: " + std::string(s));
}

}  // namespace msft
