// SPDX-License-Identifier: Apache-2.0
#pragma once

// The trainer-session contract every strategy drives, and the in-process
// implementation backed by the dynamics simulator.
//
// A session is used by one caller at a time. Compute only moves forward
// except through load(). The model state behind save()/load() is an opaque
// string owned by the trainer; the scheduler stores it in the checkpoint
// store and hands it back verbatim.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msft/core.hpp"
#include "msft/dynamics.hpp"

namespace msft {

class SessionError : public Error {
 public:
  using Error::Error;
};

struct ActiveDataset {
  DatasetId id;
  double exposure = 1.0;  // passes over this dataset per mixture epoch
};

struct SessionSetup {
  MixtureSpec mixture;
  std::uint64_t seed = 20;
  double eval_interval = 0.25;
  std::optional<DynamicsConfig> dynamics;  // simulator ground truth, if any
};

class TrainerSession {
 public:
  virtual ~TrainerSession() = default;

  virtual void init(const SessionSetup& setup) = 0;
  // Trains the active datasets for `delta` mixture epochs; returns the
  // training loss after the step.
  virtual double train(std::span<const ActiveDataset> active, double delta) = 0;
  virtual double evaluate(const DatasetId& dataset) = 0;
  virtual std::string save(const std::string& ckpt) = 0;
  virtual void load(const std::string& ckpt, const std::string& state) = 0;
  // Compute position in mixture epochs.
  virtual double position() const = 0;
};

// Returns a fresh, initialized session.
using SessionFactory = std::function<std::unique_ptr<TrainerSession>()>;

inline nlohmann::json sim_state_to_json(const SimState& s) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : s.tasks) tasks.push_back({t.effective, t.shift, t.offset, t.anchor_e, t.anchor_u, t.idle, t.coverage, t.excluded});
  nlohmann::json excl = nlohmann::json::array();
  for (const auto& e : s.exclusions) excl.push_back({e.task, e.tick});
  return {{"tick", s.tick}, {"tasks", tasks}, {"exclusions", excl}};
}

inline SimState sim_state_from_json(const nlohmann::json& j) {
  SimState s;
  s.tick = j.at("tick").get<Tick>();
  for (const auto& t : j.at("tasks"))
    s.tasks.push_back({t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>(), t.at(3).get<double>(),
                       t.at(4).get<double>(), t.at(5).get<double>(), t.at(6).get<double>(), t.at(7).get<bool>()});
  for (const auto& e : j.at("exclusions")) s.exclusions.push_back({e.at(0).get<std::size_t>(), e.at(1).get<Tick>()});
  return s;
}

class SimulatorSession final : public TrainerSession {
 public:
  SimulatorSession() = default;

  void init(const SessionSetup& setup) override {
    if (initialized_) throw SessionError("already initialized");
    if (!(setup.eval_interval > 0.0)) throw SessionError("eval interval must be > 0");
    if (!setup.dynamics) throw SessionError("simulator session needs a dynamics config");
    setup.dynamics->validate();
    setup.dynamics->check_matches(setup.mixture);
    mixture_ = setup.mixture;
    cfg_ = *setup.dynamics;
    step_ = setup.eval_interval;
    state_ = SimState::fresh(mixture_.size());
    initialized_ = true;
  }

  double train(std::span<const ActiveDataset> active, double delta) override {
    require_init();
    if (active.empty()) throw SessionError("empty active set");
    Tick ticks = 0;
    try {
      ticks = ticks_for(delta, step_);
    } catch (const ConfigError&) {
      throw SessionError("delta not on grid");
    }
    if (ticks <= 0) throw SessionError("delta not on grid");
    std::vector<double> exposure(mixture_.size(), 0.0);
    for (const auto& a : active) {
      auto i = mixture_.require_index(a.id);
      if (!(a.exposure > 0.0) || !std::isfinite(a.exposure)) throw SessionError("exposure must be > 0: " + a.id);
      exposure[i] = a.exposure;
    }
    advance(cfg_, state_, exposure, ticks, step_);
    return loss_at(cfg_, state_);
  }

  double evaluate(const DatasetId& dataset) override {
    require_init();
    auto i = mixture_.require_index(dataset);
    return metric_at(cfg_, i, state_.tasks[i]);
  }

  std::string save(const std::string&) override {
    require_init();
    return sim_state_to_json(state_).dump();
  }

  void load(const std::string& ckpt, const std::string& state) override {
    require_init();
    SimState s;
    try {
      s = sim_state_from_json(nlohmann::json::parse(state));
    } catch (const nlohmann::json::exception& e) {
      throw SessionError("corrupt checkpoint state " + ckpt + ": " + e.what());
    }
    if (s.tasks.size() != mixture_.size()) throw SessionError("checkpoint " + ckpt + " belongs to another mixture");
    state_ = std::move(s);
  }

  double position() const override { return static_cast<double>(state_.tick) * step_; }

  const SimState& state() const { return state_; }
  const DynamicsConfig& dynamics() const { return cfg_; }

 private:
  void require_init() const {
    if (!initialized_) throw SessionError("not initialized");
  }

  bool initialized_ = false;
  MixtureSpec mixture_;
  DynamicsConfig cfg_;
  double step_ = 0.25;
  SimState state_;
};

inline SessionFactory simulator_factory(SessionSetup setup) {
  return [setup = std::move(setup)] {
    auto s = std::make_unique<SimulatorSession>();
    s->init(setup);
    return std::unique_ptr<TrainerSession>(std::move(s));
  };
}

}  // namespace msft
