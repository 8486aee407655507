// SPDX-License-Identifier: Apache-2.0
#pragma once

// Event-sourced run trace. Every train/eval/exclude/rollback/checkpoint action
// of a strategy run is appended here; FLOPs and disk accounting are computed
// from the trace alone.
//
// Wire format (msft-trace/1): one JSON object per line, keys sorted, compute
// positions stored as integer grid ticks. The first line is the run header
// ("kind":"meta"); each following line is one event:
//
//   session     {label}                       a fresh trainer session starts
//   stage       {stage, tick}                 a roll-out / stage begins
//   train       {active[], tick, tokens, loss}  one grid step of training
//   eval        {dataset, stage, tick, metric, tokens}
//   step_end    {stage, tick}                 all evals of one grid point done
//   exclude     {dataset, stage, tick}
//   rollback    {ckpt, tick}
//   ckpt_save   {ckpt, stage, tick, size}
//   ckpt_delete {ckpt}

#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "msft/core.hpp"

namespace msft {

class TraceError : public Error {
 public:
  using Error::Error;
};

namespace event {

struct SessionStart {
  std::string label;
  bool operator==(const SessionStart&) const = default;
};
struct StageBegin {
  int stage = 0;
  Tick tick = 0;
  bool operator==(const StageBegin&) const = default;
};
struct TrainStep {
  std::vector<DatasetId> active;
  Tick tick = 0;  // position after the step
  std::int64_t tokens = 0;
  double loss = 0.0;
  bool operator==(const TrainStep&) const = default;
};
struct Eval {
  DatasetId dataset;
  int stage = 0;
  Tick tick = 0;
  double metric = 0.0;
  std::int64_t tokens = 0;
  bool operator==(const Eval&) const = default;
};
struct StepEnd {
  int stage = 0;
  Tick tick = 0;
  bool operator==(const StepEnd&) const = default;
};
struct Exclude {
  DatasetId dataset;
  int stage = 0;
  Tick tick = 0;
  bool operator==(const Exclude&) const = default;
};
struct Rollback {
  std::string ckpt;
  Tick tick = 0;
  bool operator==(const Rollback&) const = default;
};
struct CkptSave {
  std::string ckpt;
  int stage = 0;
  Tick tick = 0;
  double size = 1.0;
  bool operator==(const CkptSave&) const = default;
};
struct CkptDelete {
  std::string ckpt;
  bool operator==(const CkptDelete&) const = default;
};

}  // namespace event

using TraceEvent = std::variant<event::SessionStart, event::StageBegin, event::TrainStep, event::Eval,
                                event::StepEnd, event::Exclude, event::Rollback, event::CkptSave,
                                event::CkptDelete>;

struct TraceMeta {
  std::string strategy;
  std::uint64_t seed = 0;
  double eval_interval = 0.25;
  double theta = 1e9;
  std::vector<DatasetId> mixture;
  bool complete = true;
  bool operator==(const TraceMeta&) const = default;
};

class RunTrace {
 public:
  TraceMeta meta;

  void append(TraceEvent ev) { events_.push_back(std::move(ev)); }
  const std::vector<TraceEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool operator==(const RunTrace&) const = default;

 private:
  std::vector<TraceEvent> events_;
};

namespace detail {

using nlohmann::json;

inline json event_to_json(const TraceEvent& ev) {
  return std::visit(
      [](const auto& e) -> json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, event::SessionStart>) {
          return {{"kind", "session"}, {"label", e.label}};
        } else if constexpr (std::is_same_v<T, event::StageBegin>) {
          return {{"kind", "stage"}, {"stage", e.stage}, {"tick", e.tick}};
        } else if constexpr (std::is_same_v<T, event::TrainStep>) {
          return {{"kind", "train"}, {"active", e.active}, {"tick", e.tick}, {"tokens", e.tokens}, {"loss", e.loss}};
        } else if constexpr (std::is_same_v<T, event::Eval>) {
          return {{"kind", "eval"},   {"dataset", e.dataset}, {"stage", e.stage},
                  {"tick", e.tick},   {"metric", e.metric},   {"tokens", e.tokens}};
        } else if constexpr (std::is_same_v<T, event::StepEnd>) {
          return {{"kind", "step_end"}, {"stage", e.stage}, {"tick", e.tick}};
        } else if constexpr (std::is_same_v<T, event::Exclude>) {
          return {{"kind", "exclude"}, {"dataset", e.dataset}, {"stage", e.stage}, {"tick", e.tick}};
        } else if constexpr (std::is_same_v<T, event::Rollback>) {
          return {{"kind", "rollback"}, {"ckpt", e.ckpt}, {"tick", e.tick}};
        } else if constexpr (std::is_same_v<T, event::CkptSave>) {
          return {{"kind", "ckpt_save"}, {"ckpt", e.ckpt}, {"stage", e.stage}, {"tick", e.tick}, {"size", e.size}};
        } else {
          return {{"kind", "ckpt_delete"}, {"ckpt", e.ckpt}};
        }
      },
      ev);
}

inline double as_real(const json& j) {
  if (!j.is_number()) throw TraceError("expected number");
  return j.get<double>();
}

inline TraceEvent event_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "session") return event::SessionStart{j.at("label").get<std::string>()};
  if (kind == "stage") return event::StageBegin{j.at("stage").get<int>(), j.at("tick").get<Tick>()};
  if (kind == "train")
    return event::TrainStep{j.at("active").get<std::vector<DatasetId>>(), j.at("tick").get<Tick>(),
                            j.at("tokens").get<std::int64_t>(), as_real(j.at("loss"))};
  if (kind == "eval")
    return event::Eval{j.at("dataset").get<std::string>(), j.at("stage").get<int>(), j.at("tick").get<Tick>(),
                       as_real(j.at("metric")), j.at("tokens").get<std::int64_t>()};
  if (kind == "step_end") return event::StepEnd{j.at("stage").get<int>(), j.at("tick").get<Tick>()};
  if (kind == "exclude")
    return event::Exclude{j.at("dataset").get<std::string>(), j.at("stage").get<int>(), j.at("tick").get<Tick>()};
  if (kind == "rollback") return event::Rollback{j.at("ckpt").get<std::string>(), j.at("tick").get<Tick>()};
  if (kind == "ckpt_save")
    return event::CkptSave{j.at("ckpt").get<std::string>(), j.at("stage").get<int>(), j.at("tick").get<Tick>(),
                           as_real(j.at("size"))};
  if (kind == "ckpt_delete") return event::CkptDelete{j.at("ckpt").get<std::string>()};
  throw TraceError("unknown trace event kind: " + kind);
}

}  // namespace detail

inline std::string serialize_event(const TraceEvent& ev) { return detail::event_to_json(ev).dump(); }

inline void write_trace(std::ostream& os, const RunTrace& trace) {
  nlohmann::json head = {{"kind", "meta"},
                         {"format", "msft-trace/1"},
                         {"strategy", trace.meta.strategy},
                         {"seed", trace.meta.seed},
                         {"eval_interval", trace.meta.eval_interval},
                         {"theta", trace.meta.theta},
                         {"mixture", trace.meta.mixture},
                         {"complete", trace.meta.complete}};
  os << head.dump() << '\n';
  for (const auto& ev : trace.events()) os << serialize_event(ev) << '\n';
}

inline std::string serialize_trace(const RunTrace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

inline RunTrace read_trace(std::istream& is) {
  RunTrace trace;
  std::string line;
  bool have_meta = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw TraceError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_meta) {
        if (j.at("kind") != "meta" || j.at("format") != "msft-trace/1")
          throw TraceError("trace must start with an msft-trace/1 meta line");
        trace.meta.strategy = j.at("strategy").get<std::string>();
        trace.meta.seed = j.at("seed").get<std::uint64_t>();
        trace.meta.eval_interval = detail::as_real(j.at("eval_interval"));
        trace.meta.theta = detail::as_real(j.at("theta"));
        trace.meta.mixture = j.at("mixture").get<std::vector<DatasetId>>();
        trace.meta.complete = j.at("complete").get<bool>();
        have_meta = true;
      } else {
        trace.append(detail::event_from_json(j));
      }
    } catch (const nlohmann::json::exception& e) {
      throw TraceError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_meta) throw TraceError("empty trace");
  return trace;
}

inline RunTrace parse_trace(const std::string& text) {
  std::istringstream is(text);
  return read_trace(is);
}

// State reconstructed by folding the trace from the beginning.
struct ReplayState {
  std::set<DatasetId> active;
  std::vector<DatasetId> excluded;
  std::map<std::string, double> live;  // checkpoint id -> size units
  int stage = 0;
  Tick tick = 0;

  double copies() const {
    double n = 0.0;
    for (const auto& [id, size] : live) n += size;
    return n;
  }
};

// Applies events one at a time and enforces the causal invariants: rollbacks
// target live checkpoints, exclusions name previously active datasets,
// deletes name live checkpoints.
class TraceReplayer {
 public:
  void apply(const TraceEvent& ev) {
    std::visit([this](const auto& e) { on(e); }, ev);
    ++index_;
  }

  const ReplayState& state() const { return state_; }

 private:
  void fail(const std::string& what) const {
    throw TraceError("trace event " + std::to_string(index_) + ": " + what);
  }

  void on(const event::SessionStart&) {
    state_.active.clear();
    state_.excluded.clear();
    ever_active_.clear();
    state_.tick = 0;
    state_.stage = 0;
  }
  void on(const event::StageBegin& e) {
    state_.stage = e.stage;
    state_.tick = e.tick;
  }
  void on(const event::TrainStep& e) {
    if (e.tick <= state_.tick) fail("training must advance compute");
    state_.active = {e.active.begin(), e.active.end()};
    ever_active_.insert(e.active.begin(), e.active.end());
    state_.tick = e.tick;
  }
  void on(const event::Eval&) {}
  void on(const event::StepEnd&) {}
  void on(const event::Exclude& e) {
    if (!ever_active_.count(e.dataset)) fail("exclude of never-active dataset " + e.dataset);
    if (std::find(state_.excluded.begin(), state_.excluded.end(), e.dataset) != state_.excluded.end())
      fail("dataset excluded twice: " + e.dataset);
    state_.excluded.push_back(e.dataset);
    state_.active.erase(e.dataset);
  }
  void on(const event::Rollback& e) {
    if (!state_.live.count(e.ckpt)) fail("rollback to checkpoint that is not live: " + e.ckpt);
    state_.tick = e.tick;
  }
  void on(const event::CkptSave& e) {
    if (state_.live.count(e.ckpt)) fail("checkpoint saved twice: " + e.ckpt);
    state_.live[e.ckpt] = e.size;
  }
  void on(const event::CkptDelete& e) {
    if (!state_.live.erase(e.ckpt)) fail("delete of checkpoint that is not live: " + e.ckpt);
  }

  ReplayState state_;
  std::set<DatasetId> ever_active_;
  std::size_t index_ = 0;
};

// Replays the whole trace, returning the state after every event.
inline std::vector<ReplayState> replay(const RunTrace& trace) {
  TraceReplayer r;
  std::vector<ReplayState> out;
  out.reserve(trace.size());
  for (const auto& ev : trace.events()) {
    r.apply(ev);
    out.push_back(r.state());
  }
  return out;
}

inline void audit_trace(const RunTrace& trace) {
  TraceReplayer r;
  for (const auto& ev : trace.events()) r.apply(ev);
}

}  // namespace msft
