// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint persistence with stage-end pruning and a utilization audit.
//
// A live checkpoint always carries at least one tag: the rollback base
// (theta-hat), the global best (theta-star) or the running peak of one
// dataset within the current stage. Removing the last tag deletes the blob.
// Checkpoints taken at the same (stage, tick) are the same model and share
// one blob.
//
// On disk (optional):
//   <dir>/blobs/<id>.ckpt   opaque state, written once
//   <dir>/MANIFEST          {"format":"msft-manifest/1"} then one JSON
//                           object per live checkpoint; replaced atomically
//                           via MANIFEST.tmp + rename after every mutation

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "msft/core.hpp"
#include "msft/trace.hpp"

namespace msft {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct CheckpointTag {
  enum class Kind { Rollback, GlobalBest, Peak };
  Kind kind = Kind::Peak;
  DatasetId dataset;  // Peak only

  static CheckpointTag rollback() { return {Kind::Rollback, {}}; }
  static CheckpointTag best() { return {Kind::GlobalBest, {}}; }
  static CheckpointTag peak(DatasetId d) { return {Kind::Peak, std::move(d)}; }

  auto operator<=>(const CheckpointTag&) const = default;

  std::string str() const {
    switch (kind) {
      case Kind::Rollback: return "rollback";
      case Kind::GlobalBest: return "best";
      case Kind::Peak: return "peak:" + dataset;
    }
    return {};
  }

  static CheckpointTag parse(const std::string& s) {
    if (s == "rollback") return rollback();
    if (s == "best") return best();
    if (s.rfind("peak:", 0) == 0 && s.size() > 5) return peak(s.substr(5));
    throw CheckpointError("bad checkpoint tag: " + s);
  }
};

struct CheckpointMeta {
  std::string id;
  int stage = 0;
  Tick tick = 0;
  double size_units = 1.0;
  std::set<CheckpointTag> tags;
};

inline std::string checkpoint_id(int stage, Tick tick) { return fmt::format("s{:02}-t{:04}", stage, tick); }

class CheckpointStore {
 public:
  using Sink = std::function<void(const TraceEvent&)>;

  explicit CheckpointStore(std::optional<std::filesystem::path> dir = std::nullopt, double size_units = 1.0)
      : dir_(std::move(dir)), size_units_(size_units) {
    if (!(size_units_ > 0.0)) throw CheckpointError("checkpoint size must be > 0");
    if (dir_) {
      std::filesystem::create_directories(*dir_ / "blobs");
      write_manifest();
    }
  }

  // Reopens a store from its manifest.
  static CheckpointStore open(const std::filesystem::path& dir) {
    std::ifstream in(dir / "MANIFEST");
    if (!in) throw CheckpointError("no manifest in " + dir.string());
    CheckpointStore store;
    store.dir_ = dir;
    std::string line;
    bool head = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (head) {
        if (j.value("format", "") != "msft-manifest/1") throw CheckpointError("unsupported manifest format");
        head = false;
        continue;
      }
      CheckpointMeta m;
      m.id = j.at("id").get<std::string>();
      m.stage = j.at("stage").get<int>();
      m.tick = j.at("tick").get<Tick>();
      m.size_units = j.at("size").get<double>();
      for (const auto& t : j.at("tags")) m.tags.insert(CheckpointTag::parse(t.get<std::string>()));
      std::ifstream blob(store.blob_path(m.id), std::ios::binary);
      if (!blob) throw CheckpointError("missing blob for " + m.id);
      store.blobs_[m.id] = std::string(std::istreambuf_iterator<char>(blob), {});
      store.live_[m.id] = std::move(m);
    }
    if (head) throw CheckpointError("empty manifest");
    return store;
  }

  void set_sink(Sink sink) { sink_ = std::move(sink); }

  // Stores `blob` for (stage, tick) with the given tags. An existing live
  // checkpoint at the same point gains the tags instead.
  std::string put(std::string blob, int stage, Tick tick, const std::set<CheckpointTag>& tags) {
    if (tags.empty()) throw CheckpointError("a checkpoint needs at least one tag");
    auto id = checkpoint_id(stage, tick);
    if (auto it = live_.find(id); it != live_.end()) {
      it->second.tags.insert(tags.begin(), tags.end());
      sync();
      return id;
    }
    CheckpointMeta m{id, stage, tick, size_units_, tags};
    if (dir_) {
      std::ofstream out(blob_path(id), std::ios::binary | std::ios::trunc);
      out << blob;
      if (!out) throw CheckpointError("failed to write blob " + id);
    }
    blobs_[id] = std::move(blob);
    live_[id] = std::move(m);
    deleted_.erase(id);
    emit(event::CkptSave{id, stage, tick, size_units_});
    sync();
    return id;
  }

  const std::string& get(const std::string& id) const {
    if (!live_.count(id)) {
      if (deleted_.count(id)) throw CheckpointError("checkpoint pruned: " + id);
      throw CheckpointError("unknown checkpoint: " + id);
    }
    return blobs_.at(id);
  }

  bool live(const std::string& id) const { return live_.count(id) != 0; }
  const CheckpointMeta& meta(const std::string& id) const {
    auto it = live_.find(id);
    if (it == live_.end()) throw CheckpointError("checkpoint not live: " + id);
    return it->second;
  }
  std::size_t size() const { return live_.size(); }

  double live_units() const {
    double u = 0.0;
    for (const auto& [id, m] : live_) u += m.size_units;
    return u;
  }

  std::vector<CheckpointMeta> checkpoints() const {
    std::vector<CheckpointMeta> out;
    for (const auto& [id, m] : live_) out.push_back(m);
    return out;
  }

  std::optional<std::string> find_tag(const CheckpointTag& tag) const {
    for (const auto& [id, m] : live_)
      if (m.tags.count(tag)) return id;
    return std::nullopt;
  }

  void add_tag(const std::string& id, const CheckpointTag& tag) {
    auto it = live_.find(id);
    if (it == live_.end()) throw CheckpointError("checkpoint not live: " + id);
    it->second.tags.insert(tag);
    sync();
  }

  // Removes `tag` from `id`; a checkpoint left without tags is deleted.
  void remove_tag(const std::string& id, const CheckpointTag& tag) {
    auto it = live_.find(id);
    if (it == live_.end()) return;
    it->second.tags.erase(tag);
    if (it->second.tags.empty()) erase(id);
    sync();
  }

  void retag(const std::string& id, std::set<CheckpointTag> tags) {
    auto it = live_.find(id);
    if (it == live_.end()) throw CheckpointError("checkpoint not live: " + id);
    it->second.tags = std::move(tags);
    if (it->second.tags.empty()) erase(id);
    sync();
  }

  // Moves a singleton tag (rollback, best) to `id`, releasing the previous
  // holder.
  void move_tag(const CheckpointTag& tag, const std::string& id) {
    auto prev = find_tag(tag);
    if (prev == id) return;
    add_tag(id, tag);
    if (prev) remove_tag(*prev, tag);
  }

  // Keeps only `keep`; every peak tag is cleared. Nothing is touched when a
  // keep id is missing.
  std::vector<std::string> prune_end_of_stage(const std::vector<std::string>& keep) {
    for (const auto& k : keep)
      if (!live_.count(k)) throw CheckpointError("prune keep-set names a checkpoint that is not live: " + k);
    std::vector<std::string> doomed;
    for (const auto& [id, m] : live_)
      if (std::find(keep.begin(), keep.end(), id) == keep.end()) doomed.push_back(id);
    for (const auto& id : doomed) erase(id);
    for (auto& [id, m] : live_) std::erase_if(m.tags, [](const CheckpointTag& t) { return t.kind == CheckpointTag::Kind::Peak; });
    std::vector<std::string> orphaned;
    for (const auto& [id, m] : live_)
      if (m.tags.empty()) orphaned.push_back(id);
    for (const auto& id : orphaned) erase(id);
    doomed.insert(doomed.end(), orphaned.begin(), orphaned.end());
    sync();
    return doomed;
  }

 private:
  std::filesystem::path blob_path(const std::string& id) const { return *dir_ / "blobs" / (id + ".ckpt"); }

  void emit(const TraceEvent& ev) {
    if (sink_) sink_(ev);
  }

  void erase(const std::string& id) {
    live_.erase(id);
    blobs_.erase(id);
    deleted_.insert(id);
    if (dir_) std::filesystem::remove(blob_path(id));
    emit(event::CkptDelete{id});
  }

  void sync() {
    if (dir_) write_manifest();
  }

  void write_manifest() const {
    auto tmp = *dir_ / "MANIFEST.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << nlohmann::json{{"format", "msft-manifest/1"}}.dump() << '\n';
      for (const auto& [id, m] : live_) {
        std::vector<std::string> tags;
        for (const auto& t : m.tags) tags.push_back(t.str());
        nlohmann::json j = {{"id", id}, {"stage", m.stage}, {"tick", m.tick}, {"size", m.size_units}, {"tags", tags}};
        out << j.dump() << '\n';
      }
      if (!out) throw CheckpointError("failed to write manifest");
    }
    std::filesystem::rename(tmp, *dir_ / "MANIFEST");
  }

  std::optional<std::filesystem::path> dir_;
  double size_units_ = 1.0;
  std::map<std::string, CheckpointMeta> live_;
  std::map<std::string, std::string> blobs_;
  std::set<std::string> deleted_;
  Sink sink_;
};

struct UtilizationStats {
  std::vector<double> per_step;  // live copies at every grid point (StepEnd)
  double peak_copies = 0.0;
  double average_copies = 0.0;
  std::vector<double> stage_peaks;
  // Mean over stages of (stage peak - copies carried into the stage + 2):
  // each stage is charged for its own peaks plus the two retained models.
  double stage_peak_average = 0.0;
};

inline UtilizationStats utilization(const RunTrace& trace) {
  UtilizationStats u;
  TraceReplayer r;
  std::vector<double> carried;
  double running_peak = 0.0;
  bool in_stage = false;
  auto close_stage = [&] {
    if (in_stage) u.stage_peaks.push_back(running_peak);
  };
  for (const auto& ev : trace.events()) {
    r.apply(ev);
    const double live = r.state().copies();
    u.peak_copies = std::max(u.peak_copies, live);
    if (std::holds_alternative<event::SessionStart>(ev)) {
      close_stage();
      in_stage = false;
    } else if (std::holds_alternative<event::StageBegin>(ev)) {
      close_stage();
      in_stage = true;
      carried.push_back(live);
      running_peak = live;
    } else if (std::holds_alternative<event::StepEnd>(ev)) {
      u.per_step.push_back(live);
    }
    if (in_stage) running_peak = std::max(running_peak, live);
  }
  close_stage();
  if (!u.per_step.empty()) {
    double s = 0.0;
    for (double v : u.per_step) s += v;
    u.average_copies = s / static_cast<double>(u.per_step.size());
  }
  if (!u.stage_peaks.empty()) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.stage_peaks.size(); ++i) s += u.stage_peaks[i] - carried[i] + 2.0;
    u.stage_peak_average = s / static_cast<double>(u.stage_peaks.size());
  }
  return u;
}

struct PredictedUtilization {
  double peak = 0.0;
  double average = 0.0;
};

// Closed form for distinct peaks: stage s holds |D|-s+1 peaks plus the two
// retained models. Only defined when a stage has at least |D| grid points.
inline PredictedUtilization predicted_utilization(std::size_t datasets, Tick eval_steps) {
  if (datasets == 0) throw ConfigError("need at least one dataset");
  if (eval_steps < static_cast<Tick>(datasets)) throw ConfigError("closed form needs eval steps per stage >= |D|");
  const auto d = static_cast<double>(datasets);
  return {d + 1.0, (d + 5.0) / 2.0};
}

}  // namespace msft
