#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "otgym/env.hpp"
#include "otgym/rl.hpp"
#include "otgym/scenario.hpp"
#include "otgym/shared.hpp"

namespace otgym {

/// Single-slot mailbox: writers overwrite, the reader takes the newest value.
template <typename T>
class LatestSlot {
 public:
  void put(T value) {
    std::lock_guard lock(mutex_);
    if (value_) ++dropped_;
    value_ = std::move(value);
  }
  std::optional<T> take() {
    std::lock_guard lock(mutex_);
    std::optional<T> out;
    out.swap(value_);
    return out;
  }
  std::uint64_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

 private:
  mutable std::mutex mutex_;
  std::optional<T> value_;
  std::uint64_t dropped_ = 0;
};

/// Environment limits for interactive sessions: ten minutes, no decision cap.
EnvConfig interactive_env();

struct SessionConfig {
  std::filesystem::path scenario;  // empty: bundled default
  nlohmann::json scenario_doc;     // inline scenario; wins over the file when set
  std::optional<std::uint64_t> seed;  // default: the scenario's own seed
  OperatingMode mode = OperatingMode::Shared;
  std::optional<std::filesystem::path> checkpoint;  // speed policy; constant level otherwise
  int constant_level = 0;
  double tick_rate_hz = 100.0;
  double broadcast_hz = 30.0;
  EnvConfig env = interactive_env();
  BlendConfig blend;
  double filter_beta = 0.2;
  double haptic_scale = 10.0;

  void validate() const;
};

nlohmann::json to_json(const SessionConfig& c);

/// What a tick did, for telemetry and broadcasting.
struct TickRecord {
  std::uint64_t tick = 0;  // ticks since reset, after this one
  OperatingMode mode = OperatingMode::Shared;
  int speed_level = 0;
  std::optional<Vec2> input;  // operator increment consumed this tick
  SharedTelemetry telemetry;
  std::uint64_t world_hash = 0;
};

/// One interactive episode driven tick by tick. Not thread-safe: a single
/// owner (the simulation thread) calls every method.
class Session {
 public:
  explicit Session(SessionConfig config);
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const SessionConfig& config() const { return config_; }
  const Scenario& scenario() const { return *scenario_; }
  const SmoothPath& path() const { return path_; }
  const TransportEpisode& episode() const { return *episode_; }
  std::uint64_t seed() const { return seed_; }
  OperatingMode mode() const { return mode_; }
  bool running() const { return running_; }
  bool done() const { return episode_->done(); }
  std::uint64_t ticks() const { return ticks_; }
  std::uint64_t episode_index() const { return episode_index_; }
  const std::optional<SharedTelemetry>& last_telemetry() const { return last_; }

  void start() { running_ = true; }
  void pause() { running_ = false; }
  /// New episode; keeps the seed unless one is given. Leaves the session paused.
  void reset(std::optional<std::uint64_t> seed = {});
  void set_mode(OperatingMode mode) { mode_ = mode; }

  /// Advances one tick when running and not done. Operator input is ignored in
  /// autonomous mode (the record then carries no input).
  std::optional<TickRecord> tick(const std::optional<OperatorInput>& input);

  /// Applies an already decided tick, as recorded. Used by replay.
  TickRecord apply(OperatingMode mode, int speed_level, const std::optional<Vec2>& input);

  nlohmann::json state_payload() const;
  nlohmann::json haptic_payload() const;
  nlohmann::json episode_result_payload() const;
  nlohmann::json path_payload() const;
  /// Step log line for the latest tick.
  nlohmann::json step_log() const;
  /// Everything replay needs to rebuild this episode.
  nlohmann::json trace_header() const;

 private:
  void rebuild_episode();

  SessionConfig config_;
  std::shared_ptr<const Scenario> scenario_;
  SmoothPath path_;
  std::unique_ptr<TransportEpisode> episode_;
  SharedController controller_;
  QNetwork net_;
  std::unique_ptr<SpeedPolicy> policy_;
  Rng policy_rng_;
  std::uint64_t seed_ = 0;
  OperatingMode mode_;
  bool running_ = false;
  int level_ = 0;
  std::uint64_t ticks_ = 0;
  std::uint64_t episode_index_ = 0;
  std::optional<SharedTelemetry> last_;
};

/// Plans the transport path for a scenario's task.
SmoothPath plan_task_path(const Scenario& scenario);

class TraceError : public std::runtime_error {
 public:
  enum class Kind { Schema, SeedMismatch, Divergence };
  TraceError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Trace file: a header line, then one JSON line per tick.
class TraceWriter {
 public:
  TraceWriter(std::ostream& out, const nlohmann::json& header);
  void write(const TickRecord& r);

 private:
  std::ostream* out_;
};

nlohmann::json to_json(const TickRecord& r);

struct ReplayResult {
  std::uint64_t ticks = 0;
  bool partial = false;  // the trace ended in an incomplete record
  std::uint64_t final_hash = 0;
  Termination termination = Termination::None;
  bool success = false;
  double completion_time = 0.0;
};

nlohmann::json to_json(const ReplayResult& r);

using StepLogSink = std::function<void(const nlohmann::json&)>;

/// Re-executes a trace and checks every tick's world hash. A seed that differs
/// from the recorded one is refused before anything runs.
ReplayResult replay_trace(std::istream& in, std::optional<std::uint64_t> expected_seed = {},
                          const StepLogSink& step_log = {});

}  // namespace otgym
