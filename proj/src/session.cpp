#include "otgym/session.hpp"

#include <cmath>
#include <string>

#include "otgym/planner.hpp"

namespace otgym {

using nlohmann::json;

namespace {

constexpr const char* kTraceFormat = "otgym-trace";
constexpr int kTraceVersion = 1;

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec_json(const Vec2& v) { return json::array({v.x, v.y}); }

std::uint64_t parse_hex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw std::invalid_argument("bad hex '" + s + "'");
  return v;
}

}  // namespace

EnvConfig interactive_env() {
  EnvConfig e;
  e.max_time = 600.0;
  e.record_traces = false;
  return e;
}

void SessionConfig::validate() const {
  if (!(tick_rate_hz > 0.0 && broadcast_hz > 0.0)) throw std::invalid_argument("session: rates must be positive");
  if (constant_level < 0 || constant_level >= kNumSpeedLevels) throw std::invalid_argument("session: bad speed level");
  if (!(filter_beta > 0.0 && filter_beta <= 1.0)) throw std::invalid_argument("session: filter_beta must lie in (0, 1]");
  blend.validate();
}

json to_json(const SessionConfig& c) {
  json j = {{"scenario", c.scenario.string()},
            {"mode", to_string(c.mode)},
            {"constant_level", c.constant_level},
            {"tick_rate_hz", c.tick_rate_hz},
            {"broadcast_hz", c.broadcast_hz},
            {"env", to_json(c.env)},
            {"blend", to_json(c.blend)},
            {"filter_beta", c.filter_beta},
            {"haptic_scale", c.haptic_scale}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["checkpoint"] = c.checkpoint ? json(c.checkpoint->string()) : json(nullptr);
  return j;
}

SmoothPath plan_task_path(const Scenario& scenario) {
  if (!scenario.task) throw std::invalid_argument("scenario '" + scenario.name + "' has no transport task");
  if (!scenario.world.chip) throw std::invalid_argument("scenario '" + scenario.name + "' has no chip");
  const TaskSpec& t = *scenario.task;
  const OccupancyGrid grid = rasterize(*scenario.world.chip, t.resolution);
  PlanRequest req;
  req.start = t.start;
  req.goal = t.goal;
  req.robot_radius = t.planning_radius;
  req.clearance = t.clearance;
  return plan_path(grid, req).smoothed.path;
}

// ---------------------------------------------------------------------------

Session::Session(SessionConfig config)
    : config_(std::move(config)),
      controller_(config_.blend, config_.filter_beta, config_.haptic_scale),
      mode_(config_.mode) {
  config_.validate();
  Scenario sc = config_.scenario_doc.is_null()
                    ? load_scenario(config_.scenario.empty() ? default_scenario_path() : config_.scenario)
                    : parse_scenario(config_.scenario_doc);
  scenario_ = std::make_shared<const Scenario>(std::move(sc));
  path_ = plan_task_path(*scenario_);
  if (config_.checkpoint) {
    net_ = load_checkpoint(*config_.checkpoint);
    policy_ = std::make_unique<QPolicy>(net_);
  } else {
    policy_ = std::make_unique<ConstantSpeedPolicy>(config_.constant_level);
  }
  seed_ = config_.seed.value_or(scenario_->seed);
  rebuild_episode();
}

void Session::rebuild_episode() {
  episode_ = std::make_unique<TransportEpisode>(*scenario_, path_, config_.env);
  episode_->reset(seed_);
  controller_.reset();
  policy_rng_ = Rng(seed_, Stream::Exploration);
  level_ = 0;
  ticks_ = 0;
  last_.reset();
  running_ = false;
}

void Session::reset(std::optional<std::uint64_t> seed) {
  if (seed) seed_ = *seed;
  ++episode_index_;
  rebuild_episode();
}

std::optional<TickRecord> Session::tick(const std::optional<OperatorInput>& input) {
  if (!running_ || episode_->done()) return std::nullopt;
  const auto interval = static_cast<std::uint64_t>(episode_->config().decision_interval);
  if (mode_ != OperatingMode::Manual && ticks_ % interval == 0) {
    level_ = policy_->act(episode_->observe(level_), policy_rng_);
  }
  std::optional<Vec2> used;
  if (mode_ != OperatingMode::Autonomous && input) used = input->delta_p_h;
  return apply(mode_, level_, used);
}

TickRecord Session::apply(OperatingMode mode, int speed_level, const std::optional<Vec2>& input) {
  if (episode_->done()) throw std::logic_error("episode already finished");
  OperatorInput in;
  if (input) in.delta_p_h = *input;
  in.timestamp = episode_->time();
  level_ = speed_level;
  TickRecord r;
  r.telemetry = controller_.step(*episode_, mode, speed_level, in);
  r.tick = ++ticks_;
  r.mode = mode;
  r.speed_level = speed_level;
  r.input = input;
  r.world_hash = world_hash(episode_->world());
  last_ = r.telemetry;
  return r;
}

json Session::state_payload() const {
  const WorldState& w = episode_->world();
  json bodies = json::array();
  for (const auto& b : w.bodies) {
    bodies.push_back({{"id", b.id}, {"kind", to_string(b.kind)}, {"position", vec_json(b.position)}, {"radius", b.radius}});
  }
  json traps = json::array();
  for (const auto& t : w.traps) {
    traps.push_back({{"id", t.id}, {"position", vec_json(t.position)}, {"attached_body", t.attached_body},
                     {"enabled", t.enabled}});
  }
  json p = {{"episode", episode_index_},
            {"tick", ticks_},
            {"time", w.time},
            {"seed", seed_},
            {"mode", to_string(mode_)},
            {"running", running_},
            {"done", episode_->done()},
            {"termination", to_string(episode_->termination())},
            {"bodies", bodies},
            {"traps", traps},
            {"reference", vec_json(episode_->reference())},
            {"progress", episode_->progress_fraction()},
            {"speed_level", level_}};
  p["failure"] = w.failure ? json(to_string(w.failure->kind)) : json(nullptr);
  if (last_) {
    p["alpha"] = last_->alpha;
    p["d"] = finite_or_null(last_->d);
    p["label"] = to_string(last_->label);
  } else {
    p["alpha"] = nullptr;
    p["d"] = nullptr;
    p["label"] = nullptr;
  }
  return p;
}

json Session::haptic_payload() const {
  json traps = json::array();
  if (last_) {
    for (std::size_t i = 0; i < last_->haptic.size(); ++i) {
      const HapticSample& h = last_->haptic[i];
      traps.push_back({{"trap", i},
                       {"raw_force", vec_json(h.raw_force)},
                       {"scaled_force", vec_json(h.scaled_force)},
                       {"magnitude", h.scaled_force.norm()}});
    }
  }
  return {{"tick", ticks_}, {"time", episode_->time()}, {"traps", traps}};
}

json Session::episode_result_payload() const {
  const WorldState& w = episode_->world();
  json j = {{"episode", episode_index_},
            {"seed", seed_},
            {"mode", to_string(mode_)},
            {"success", episode_->success()},
            {"termination", to_string(episode_->termination())},
            {"completion_time", w.time},
            {"ticks", ticks_}};
  j["failure"] = w.failure ? json(to_string(w.failure->kind)) : json(nullptr);
  return j;
}

json Session::path_payload() const {
  json pts = json::array();
  for (const auto& p : path_.points()) pts.push_back(vec_json(p));
  return {{"points", pts}, {"length", path_.length()}};
}

json Session::step_log() const { return step_log_record(episode_->world(), episode_->last_report()); }

json Session::trace_header() const {
  const std::string doc = scenario_->source.dump();
  json cfg = {{"env", to_json(config_.env)},
              {"blend", to_json(config_.blend)},
              {"filter_beta", config_.filter_beta},
              {"haptic_scale", config_.haptic_scale}};
  return {{"format", kTraceFormat},
          {"version", kTraceVersion},
          {"scenario", scenario_->name},
          {"scenario_doc", scenario_->source},
          {"scenario_hash", hex64(fnv1a(doc))},
          {"seed", seed_},
          {"episode", episode_index_},
          {"config", cfg},
          {"config_hash", hex64(fnv1a(cfg.dump()))},
          {"initial_hash", hex64(world_hash(episode_->world()))}};
}

// ---------------------------------------------------------------------------
// Traces

json to_json(const TickRecord& r) {
  json j = {{"tick", r.tick}, {"mode", to_string(r.mode)}, {"level", r.speed_level}, {"hash", hex64(r.world_hash)}};
  j["input"] = r.input ? vec_json(*r.input) : json(nullptr);
  return j;
}

TraceWriter::TraceWriter(std::ostream& out, const json& header) : out_(&out) { *out_ << header.dump() << '\n'; }

void TraceWriter::write(const TickRecord& r) { *out_ << to_json(r).dump() << '\n'; }

json to_json(const ReplayResult& r) {
  return {{"ticks", r.ticks},
          {"partial", r.partial},
          {"final_hash", hex64(r.final_hash)},
          {"termination", to_string(r.termination)},
          {"success", r.success},
          {"completion_time", r.completion_time}};
}

ReplayResult replay_trace(std::istream& in, std::optional<std::uint64_t> expected_seed, const StepLogSink& step_log) {
  using K = TraceError::Kind;
  std::string line;
  if (!std::getline(in, line)) throw TraceError(K::Schema, "trace is empty");
  const json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw TraceError(K::Schema, "trace header is not a JSON object");
  if (header.value("format", "") != kTraceFormat) throw TraceError(K::Schema, "not an otgym trace");
  if (header.value("version", 0) != kTraceVersion) {
    throw TraceError(K::Schema, "unsupported trace version " + header.value("version", json(nullptr)).dump());
  }

  SessionConfig cfg;
  std::uint64_t seed = 0;
  try {
    seed = header.at("seed").get<std::uint64_t>();
    cfg.scenario_doc = header.at("scenario_doc");
    if (hex64(fnv1a(cfg.scenario_doc.dump())) != header.at("scenario_hash").get<std::string>()) {
      throw TraceError(K::Schema, "scenario hash does not match the embedded scenario");
    }
    const json& c = header.at("config");
    cfg.env = env_config_from_json(c.at("env"));
    cfg.blend = blend_config_from_json(c.at("blend"));
    cfg.filter_beta = c.at("filter_beta").get<double>();
    cfg.haptic_scale = c.at("haptic_scale").get<double>();
  } catch (const json::exception& e) {
    throw TraceError(K::Schema, std::string("trace header: ") + e.what());
  }
  if (expected_seed && *expected_seed != seed) {
    throw TraceError(K::SeedMismatch, "trace was recorded with seed " + std::to_string(seed) + ", replay asked for " +
                                          std::to_string(*expected_seed));
  }
  cfg.seed = seed;

  Session session(cfg);
  const std::uint64_t initial = world_hash(session.episode().world());
  if (header.contains("initial_hash") && hex64(initial) != header["initial_hash"].get<std::string>()) {
    throw TraceError(K::Divergence, "initial world hash differs from the recording (seed or scenario mismatch)");
  }

  ReplayResult r;
  r.final_hash = initial;
  std::uint64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) {
        r.partial = true;  // torn final write
        break;
      }
      throw TraceError(K::Schema, "malformed record at line " + std::to_string(line_no));
    }
    OperatingMode mode;
    int level = 0;
    std::optional<Vec2> input;
    std::uint64_t tick = 0, hash = 0;
    try {
      tick = rec.at("tick").get<std::uint64_t>();
      mode = operating_mode_from_string(rec.at("mode").get<std::string>());
      level = rec.at("level").get<int>();
      hash = parse_hex(rec.at("hash").get<std::string>());
      const json& inp = rec.at("input");
      if (!inp.is_null()) input = Vec2{inp.at(0).get<double>(), inp.at(1).get<double>()};
    } catch (const std::exception& e) {
      throw TraceError(K::Schema, "record at line " + std::to_string(line_no) + ": " + e.what());
    }
    if (tick != session.ticks() + 1) {
      throw TraceError(K::Schema, "record at line " + std::to_string(line_no) + " has tick " + std::to_string(tick) +
                                      ", expected " + std::to_string(session.ticks() + 1));
    }
    if (level < 0 || level >= kNumSpeedLevels) throw TraceError(K::Schema, "speed level out of range");
    if (session.done()) throw TraceError(K::Schema, "record after the episode ended");
    const TickRecord applied = session.apply(mode, level, input);
    if (step_log) step_log(session.step_log());
    if (applied.world_hash != hash) {
      throw TraceError(K::Divergence, "world hash mismatch at tick " + std::to_string(tick) + ": recorded " +
                                          hex64(hash) + ", replayed " + hex64(applied.world_hash));
    }
    r.ticks = tick;
    r.final_hash = applied.world_hash;
  }
  r.termination = session.episode().termination();
  r.success = session.episode().success();
  r.completion_time = session.episode().time();
  return r;
}

}  // namespace otgym
