// otgym: command-line entry point for planning, training, evaluation,
// simulation, metric reports, serving, replay and batch comparisons.

#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "otgym/compare.hpp"
#include "otgym/metrics.hpp"
#include "otgym/planner.hpp"
#include "otgym/protocol.hpp"
#include "otgym/rl.hpp"
#include "otgym/server.hpp"
#include "otgym/session.hpp"
#include "otgym/shared.hpp"
#include "otgym/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace otgym;

namespace {

/// Bad flags, bad config, unreadable inputs: exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// The run completed but its domain outcome failed: exit code 1.
struct DomainFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string compiler_id() {
#if defined(__clang__)
  return "clang " __clang_version__;
#elif defined(__GNUC__)
  return "gcc " __VERSION__;
#else
  return "unknown";
#endif
}

std::string absolute_path(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

json read_json_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read " + file.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw UsageError(file.string() + " is not valid JSON");
  return j;
}

/// One invocation: its effective configuration, output directory and manifest.
class Run {
 public:
  Run(std::string command, json defaults, std::vector<std::string> argv)
      : command_(std::move(command)), config_(std::move(defaults)), argv_(std::move(argv)), started_(utc_now()),
        t0_(std::chrono::steady_clock::now()) {}

  /// Layers a config file over the defaults. A manifest is accepted too; its
  /// recorded configuration is used, which makes any run repeatable from it.
  void load_config(const std::string& file) {
    json j = read_json_file(file);
    if (j.contains("otgym_manifest")) {
      if (j.value("command", "") != command_) {
        throw UsageError(file + " is a manifest for '" + j.value("command", "") + "', not '" + command_ + "'");
      }
      j = j.at("config");
    }
    if (!j.is_object()) throw UsageError(file + ": config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!config_.contains(it.key())) throw UsageError(file + ": unknown key '" + it.key() + "' for " + command_);
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      // Sections merge key by key so a file may override a single field.
      if (config_[it.key()].is_object() && it.value().is_object()) {
        for (auto f = it.value().begin(); f != it.value().end(); ++f) config_[it.key()][f.key()] = f.value();
      } else {
        config_[it.key()] = it.value();
      }
    }
  }

  json& config() { return config_; }
  const fs::path& out() const { return out_; }

  void set_out(const std::string& dir) {
    out_ = dir.empty() ? fs::path("otgym-runs") / command_ : fs::path(dir);
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw UsageError("cannot create output directory " + out_.string() + ": " + ec.message());
  }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }

  void write_text(const std::string& name, const std::string& text) {
    std::ofstream f(output(name));
    if (!f) throw UsageError("cannot write " + (out_ / name).string());
    f << text;
  }
  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

  void write_manifest(int exit_code, const std::string& message = {}) {
    json m = {{"otgym_manifest", 1},
              {"command", command_},
              {"argv", argv_},
              {"config", config_},
              {"seed", config_.value("seed", json(nullptr))},
              {"versions",
               {{"otgym", kVersionString},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                {"cli11", CLI11_VERSION},
                {"compiler", compiler_id()},
                {"cplusplus", __cplusplus}}},
              {"outputs", outputs_},
              {"exit_code", exit_code},
              {"message", message},
              {"started_at", started_},
              {"finished_at", utc_now()},
              {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count()}};
    std::ofstream f(out_ / "manifest.json");
    f << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  json config_;
  std::vector<std::string> argv_;
  fs::path out_;
  std::vector<std::string> outputs_;
  std::string started_;
  std::chrono::steady_clock::time_point t0_;
};

// ---------------------------------------------------------------------------
// Config accessors

std::optional<std::string> opt_string(const json& c, const char* key) {
  if (!c.contains(key) || c[key].is_null()) return std::nullopt;
  if (!c[key].is_string()) throw UsageError(std::string(key) + " must be a string");
  return c[key].get<std::string>();
}

std::uint64_t get_seed(const json& c, const char* key = "seed") {
  const json& v = c.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw UsageError(std::string(key) + " must be a non-negative integer");
  }
  return c[key].get<std::uint64_t>();
}

template <typename T>
T get_num(const json& c, const char* key) {
  if (!c.contains(key) || !c[key].is_number()) throw UsageError(std::string(key) + " must be a number");
  return c[key].get<T>();
}

Vec2 get_point(const json& c, const char* key) {
  const json& v = c.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw UsageError(std::string(key) + " must be [x, y]");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

Vec2 parse_point_flag(const std::string& s, const char* flag) {
  double x = 0, y = 0;
  char comma = 0;
  std::istringstream in(s);
  if (!(in >> x >> comma >> y) || comma != ',' || !in.eof()) {
    throw UsageError(std::string(flag) + " expects x,y (µm), got '" + s + "'");
  }
  return {x, y};
}

Scenario scenario_from(const json& c) {
  const auto p = opt_string(c, "scenario");
  return load_scenario(p ? fs::path(*p) : default_scenario_path());
}

json points_json(std::span<const Vec2> pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.x, p.y});
  return a;
}

std::string fmt(double v, int prec = 6) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

/// Checkpoint-backed or constant-level speed policy.
struct PolicyChoice {
  std::unique_ptr<QNetwork> net;  // heap: the policy keeps a pointer to it
  std::unique_ptr<SpeedPolicy> policy;
};

PolicyChoice make_policy(const json& c) {
  PolicyChoice p;
  if (const auto ckpt = opt_string(c, "checkpoint")) {
    p.net = std::make_unique<QNetwork>(load_checkpoint(*ckpt));
    p.policy = std::make_unique<QPolicy>(*p.net);
  } else if (c.value("random", false)) {
    p.policy = std::make_unique<RandomPolicy>();
  } else if (c.contains("level") && !c["level"].is_null()) {
    p.policy = std::make_unique<ConstantSpeedPolicy>(c["level"].get<int>());
  } else {
    throw UsageError("choose a policy: --checkpoint, --level or --random");
  }
  return p;
}

void normalize_paths(json& c, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (const auto p = opt_string(c, k)) c[k] = absolute_path(*p);
  }
}

// ---------------------------------------------------------------------------
// plan

int cmd_plan(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario", "map"});
  OccupancyGrid grid;
  PlanRequest req;
  json source;
  if (const auto sc_path = opt_string(c, "scenario")) {
    if (opt_string(c, "map")) throw UsageError("give either --map or --scenario, not both");
    const Scenario sc = load_scenario(*sc_path);
    if (!sc.task || !sc.world.chip) throw UsageError(*sc_path + " has no transport task and chip to plan on");
    grid = rasterize(*sc.world.chip, sc.task->resolution);
    req = PlanRequest{sc.task->start, sc.task->goal, sc.task->planning_radius, sc.task->clearance};
    source = {{"scenario", *sc_path}};
  } else {
    const auto map_path = opt_string(c, "map").value_or(default_chip_map_path().string());
    const ChipMap map = load_chip_map(map_path);
    grid = load_map_grid(map);
    req = plan_request(map);
    source = {{"map", map_path}};
  }
  if (!c["start"].is_null()) req.start = get_point(c, "start");
  if (!c["goal"].is_null()) req.goal = get_point(c, "goal");
  if (!c["robot_radius"].is_null()) req.robot_radius = get_num<double>(c, "robot_radius");
  if (!c["clearance"].is_null()) req.clearance = get_num<double>(c, "clearance");

  PlanResult plan;
  try {
    plan = plan_path(grid, req);
  } catch (const PlanError& e) {
    if (e.kind() == PlanError::Kind::BadInput) throw UsageError(e.what());
    throw DomainFailure(std::string("no path: ") + e.what());
  }

  const int n_manual = get_num<int>(c, "manual_seeds");
  if (n_manual < 0) throw UsageError("manual_seeds must be >= 0");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_manual; ++i) seeds.push_back(evaluation_seed(get_seed(c), i));
  const OperatorProfile profile = operator_profile_from_json(c.at("operator"));
  const double cutoff = get_num<double>(c, "cutoff_fraction");

  const TrajectoryMetrics m_astar = compute_metrics(plan.raw, cutoff);
  const TrajectoryMetrics m_spline = compute_metrics(plan.smoothed.path.points(), cutoff);
  std::vector<std::pair<std::string, TrajectoryMetrics>> rows = {{"astar", m_astar}, {"bspline", m_spline}};

  json manual_paths = json::array();
  if (!seeds.empty()) {
    TrajectoryMetrics mean{};
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      const auto trace = operator_sketch(plan.smoothed.path, profile, seeds[i]);
      const TrajectoryMetrics m = compute_metrics(trace, cutoff);
      mean.total_length += m.total_length / seeds.size();
      mean.mean_curvature += m.mean_curvature / seeds.size();
      mean.angular_deviation += m.angular_deviation / seeds.size();
      mean.hf_energy_ratio += m.hf_energy_ratio / seeds.size();
      const std::string name = "manual_" + std::to_string(i) + ".json";
      run.write_json(name, {{"seed", seeds[i]}, {"points", points_json(trace)}, {"metrics", to_json(m)}});
      manual_paths.push_back(name);
    }
    rows.emplace_back("manual", mean);
  }

  run.write_json("astar.json", [&] {
    json cells = json::array();
    for (const auto& cell : plan.grid_path.cells) cells.push_back({cell.x, cell.y});
    return json{{"points", points_json(plan.raw)},
                {"cells", cells},
                {"cost", plan.grid_path.cost.value()},
                {"axial_moves", plan.grid_path.cost.axial},
                {"diagonal_moves", plan.grid_path.cost.diagonal}};
  }());
  run.write_json("bspline.json", {{"points", points_json(plan.smoothed.path.points())},
                                  {"densified", plan.smoothed.densified},
                                  {"fallback", plan.smoothed.fallback}});

  std::ostringstream csv;
  csv << "path";
  for (const char* name : kMetricNames) csv << ',' << name;
  csv << '\n';
  json report = {{"source", source},
                 {"start", {req.start.x, req.start.y}},
                 {"goal", {req.goal.x, req.goal.y}},
                 {"robot_radius", req.robot_radius},
                 {"clearance", req.clearance},
                 {"dilation_radius_cells", plan.dilation_radius},
                 {"manual_seeds", seeds},
                 {"manual_paths", manual_paths},
                 {"rows", json::object()}};
  std::printf("%-8s", "path");
  for (const char* name : kMetricNames) std::printf(" %18s", name);
  std::printf("\n");
  for (const auto& [name, m] : rows) {
    csv << name;
    std::printf("%-8s", name.c_str());
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
      csv << ',' << fmt(metric_value(m, k), 10);
      std::printf(" %18.6g", metric_value(m, k));
    }
    csv << '\n';
    std::printf("\n");
    report["rows"][name] = to_json(m);
  }
  run.write_text("metrics.csv", csv.str());
  run.write_json("metrics.json", report);
  return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario"});
  const Scenario sc = scenario_from(c);
  TrainConfig tc = train_config_from_json(c.at("train"));
  tc.seed = get_seed(c);
  c["train"] = to_json(tc);
  const EnvConfig env = env_config_from_json(c.at("env"));
  const SmoothPath path = plan_task_path(sc);

  const bool quiet = c.value("quiet", false);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(sc, path, tc, env, [&](int ep, const EpisodeResult& r, double eps) {
    if (!quiet && (ep + 1) % 50 == 0) {
      std::fprintf(stderr, "episode %d/%d  eps %.3f  reward %.2f  success %d\n", ep + 1, tc.episodes, eps,
                   r.cumulative_reward, r.success ? 1 : 0);
    }
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const json meta = {{"train_config", to_json(tc)}, {"env", to_json(env)}, {"scenario", sc.name}};
  json best_meta = meta, final_meta = meta;
  best_meta["episode"] = res.best_episode;
  final_meta["episode"] = tc.episodes - 1;
  save_checkpoint(run.output("best.ckpt"), res.best_net, best_meta);
  save_checkpoint(run.output("final.ckpt"), res.final_net, final_meta);

  std::ostringstream csv;
  csv << "episode,reward,success,epsilon,mean_loss\n";
  for (std::size_t i = 0; i < res.learning_curve.size(); ++i) {
    csv << i << ',' << fmt(res.learning_curve[i], 10) << ',' << res.episode_success[i] << ','
        << fmt(res.episode_epsilon[i], 10) << ',' << fmt(res.mean_loss[i], 10) << '\n';
  }
  run.write_text("learning_curve.csv", csv.str());

  const auto& curve = res.learning_curve;
  const std::size_t w = std::min<std::size_t>(100, curve.size());
  double first = 0, last = 0;
  for (std::size_t i = 0; i < w; ++i) {
    first += curve[i] / w;
    last += curve[curve.size() - 1 - i] / w;
  }
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < get_num<int>(c, "eval_episodes"); ++i) seeds.push_back(evaluation_seed(get_seed(c, "eval_seed"), i));
  QPolicy best(res.best_net);
  const EvaluationReport rep = evaluate(best, sc, path, seeds, env);
  run.write_json("train.json", {{"episodes", tc.episodes},
                                {"window", w},
                                {"first_window_mean_reward", first},
                                {"final_window_mean_reward", last},
                                {"best_episode", res.best_episode},
                                {"best_score", res.best_score},
                                {"train_seconds", secs},
                                {"evaluation", to_json(rep, false)}});
  std::printf("trained %d episodes in %.1f s; reward window %.2f -> %.2f; best checkpoint from episode %d\n",
              tc.episodes, secs, first, last, res.best_episode);
  std::printf("best checkpoint: success %.2f, mean time %s s over %zu seeds\n", rep.success_rate,
              fmt(rep.mean_time, 5).c_str(), seeds.size());
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario", "checkpoint"});
  const Scenario sc = scenario_from(c);
  const EnvConfig env = env_config_from_json(c.at("env"));
  const SmoothPath path = plan_task_path(sc);
  PolicyChoice pc = make_policy(c);
  std::vector<std::uint64_t> seeds;
  const int n = get_num<int>(c, "episodes");
  if (n <= 0) throw UsageError("episodes must be positive");
  for (int i = 0; i < n; ++i) seeds.push_back(evaluation_seed(get_seed(c), i));
  const EvaluationReport rep = evaluate(*pc.policy, sc, path, seeds, env, get_seed(c));

  std::ostringstream csv;
  csv << "index,seed,success,termination,failure,completion_time,cumulative_reward,decisions\n";
  for (std::size_t i = 0; i < rep.episodes.size(); ++i) {
    const auto& e = rep.episodes[i];
    csv << i << ',' << e.seed << ',' << (e.success ? 1 : 0) << ',' << to_string(e.termination) << ','
        << (e.failure ? to_string(*e.failure) : "") << ',' << fmt(e.completion_time, 10) << ','
        << fmt(e.cumulative_reward, 10) << ',' << e.decisions << '\n';
  }
  run.write_text("episodes.csv", csv.str());
  run.write_json("eval.json", to_json(rep, false));
  std::printf("%s: success %.2f  mean time %s s  force<=limit %.4f  distance<=bound %.4f\n", rep.policy.c_str(),
              rep.success_rate, fmt(rep.mean_time, 5).c_str(), rep.force_within_damage, rep.distance_within_bound);
  const double min_success = get_num<double>(c, "min_success");
  if (rep.success_rate < min_success) {
    throw DomainFailure("success rate " + fmt(rep.success_rate, 4) + " below threshold " + fmt(min_success, 4));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

SessionConfig session_config_from(const json& c) {
  SessionConfig s;
  if (const auto p = opt_string(c, "scenario")) s.scenario = *p;
  if (!c["seed"].is_null()) s.seed = get_seed(c);
  s.mode = operating_mode_from_string(c.at("mode").get<std::string>());
  if (const auto p = opt_string(c, "checkpoint")) s.checkpoint = *p;
  s.constant_level = c.at("level").get<int>();
  s.env = env_config_from_json(c.at("env"));
  s.blend = blend_config_from_json(c.at("blend"));
  s.filter_beta = get_num<double>(c, "filter_beta");
  s.haptic_scale = get_num<double>(c, "haptic_scale");
  if (c.contains("tick_rate_hz")) s.tick_rate_hz = get_num<double>(c, "tick_rate_hz");
  if (c.contains("broadcast_hz")) s.broadcast_hz = get_num<double>(c, "broadcast_hz");
  s.validate();
  return s;
}

int cmd_simulate(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario", "checkpoint"});
  Session session(session_config_from(c));
  c["seed"] = session.seed();
  SyntheticOperator op(operator_profile_from_json(c.at("operator")), session.seed());
  const auto max_ticks = c.at("max_ticks").get<std::uint64_t>();

  std::ofstream trace_file(run.output("trace.jsonl"));
  std::ofstream step_file(run.output("steps.jsonl"));
  if (!trace_file || !step_file) throw UsageError("cannot write into " + run.out().string());
  TraceWriter writer(trace_file, session.trace_header());
  session.start();
  while (!session.done() && (max_ticks == 0 || session.ticks() < max_ticks)) {
    std::optional<OperatorInput> input;
    if (session.mode() != OperatingMode::Autonomous) input = op.next(operator_view(session.episode()), session.path());
    const auto rec = session.tick(input);
    writer.write(*rec);
    step_file << session.step_log().dump() << '\n';
  }
  json result = session.episode_result_payload();
  result["final_hash"] = hex64(world_hash(session.episode().world()));
  run.write_json("result.json", result);
  std::printf("%s episode, seed %llu: %s after %llu ticks (%.2f s)\n", to_string(session.mode()).c_str(),
              static_cast<unsigned long long>(session.seed()), result["termination"].get<std::string>().c_str(),
              static_cast<unsigned long long>(session.ticks()), session.episode().time());
  return 0;
}

// ---------------------------------------------------------------------------
// metrics

std::vector<Vec2> read_polyline(const fs::path& file, std::optional<int> body) {
  std::ifstream in(file);
  if (!in) throw UsageError("cannot read " + file.string());
  std::vector<Vec2> pts;
  auto point = [&](const json& p) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw UsageError(file.string() + ": points must be [x, y]");
    }
    pts.push_back({p[0].get<double>(), p[1].get<double>()});
  };
  if (file.extension() == ".jsonl") {
    // Step log: follow one body, or the first trap when no body is named.
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      const json rec = json::parse(line, nullptr, false);
      if (rec.is_discarded() || !rec.is_object()) throw UsageError(file.string() + ":" + std::to_string(n) + ": not JSON");
      if (rec.contains("format")) continue;  // a trace header
      if (!rec.contains("bodies")) throw UsageError(file.string() + ":" + std::to_string(n) + ": not a step log record");
      if (body) {
        bool found = false;
        for (const auto& b : rec["bodies"]) {
          if (b.at("id").get<int>() == *body) {
            point(b.at("position"));
            found = true;
          }
        }
        if (!found) throw UsageError(file.string() + ":" + std::to_string(n) + ": no body " + std::to_string(*body));
      } else {
        if (rec.at("traps").empty()) throw UsageError(file.string() + ": step log has no traps; pass --body");
        point(rec["traps"][0]);
      }
    }
  } else {
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw UsageError(file.string() + " is not valid JSON");
    if (j.is_object() && j.contains("points")) j = j["points"];
    if (!j.is_array()) throw UsageError(file.string() + ": expected a point array or {\"points\": [...]}");
    for (const auto& p : j) point(p);
  }
  return pts;
}

int cmd_metrics(Run& run) {
  json& c = run.config();
  std::vector<std::string> inputs = c.at("inputs").get<std::vector<std::string>>();
  if (inputs.empty()) throw UsageError("metrics needs at least one input file");
  for (auto& p : inputs) p = absolute_path(p);
  c["inputs"] = inputs;
  std::optional<int> body;
  if (!c["body"].is_null()) body = c["body"].get<int>();
  const double cutoff = get_num<double>(c, "cutoff_fraction");

  json report = json::array();
  std::ostringstream csv;
  csv << "input,points";
  for (const char* name : kMetricNames) csv << ',' << name;
  csv << '\n';
  for (const auto& file : inputs) {
    const auto pts = read_polyline(file, body);
    TrajectoryMetrics m;
    try {
      m = compute_metrics(pts, cutoff);
    } catch (const MetricsError& e) {
      throw UsageError(file + ": " + e.what());
    }
    report.push_back({{"input", file}, {"points", pts.size()}, {"metrics", to_json(m)}});
    csv << file << ',' << pts.size();
    for (std::size_t k = 0; k < kMetricNames.size(); ++k) csv << ',' << fmt(metric_value(m, k), 10);
    csv << '\n';
    std::printf("%s: length %.6g  curvature %.6g  angular %.6g  hf %.6g\n", fs::path(file).filename().c_str(),
                m.total_length, m.mean_curvature, m.angular_deviation, m.hf_energy_ratio);
  }
  run.write_json("metrics.json", {{"cutoff_fraction", cutoff}, {"results", report}});
  run.write_text("metrics.csv", csv.str());
  return 0;
}

// ---------------------------------------------------------------------------
// serve

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

int cmd_serve(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario", "checkpoint", "static_dir", "record_dir"});
  ServerConfig sc;
  sc.session = session_config_from(c);
  sc.address = c.at("address").get<std::string>();
  const int port = c.at("port").get<int>();
  if (port < 0 || port > 65535) throw UsageError("port must be in 0..65535");
  sc.port = static_cast<unsigned short>(port);
  if (const auto p = opt_string(c, "static_dir")) sc.static_dir = *p;
  if (const auto p = opt_string(c, "record_dir")) sc.record_dir = fs::path(*p);
  const double duration = get_num<double>(c, "duration");

  Server server(std::move(sc));
  try {
    server.start();
  } catch (const std::runtime_error& e) {
    throw DomainFailure(e.what());
  }
  std::printf("listening on http://%s:%u (WebSocket %s, session %s)\n", c["address"].get<std::string>().c_str(),
              server.port(), protocol::kEndpoint, server.session_id().c_str());
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_interrupted) {
    if (duration > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= duration) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  const ServerStats st = server.stats();
  run.write_json("serve.json", {{"port", server.port()},
                                {"session", server.session_id()},
                                {"ticks", st.ticks},
                                {"broadcasts", st.broadcasts},
                                {"dropped_inputs", st.dropped_inputs}});
  std::printf("stopped after %llu ticks\n", static_cast<unsigned long long>(st.ticks));
  return 0;
}

// ---------------------------------------------------------------------------
// replay

int cmd_replay(Run& run) {
  json& c = run.config();
  const auto trace = opt_string(c, "trace");
  if (!trace) throw UsageError("replay needs a trace file");
  c["trace"] = absolute_path(*trace);
  std::ifstream in(c["trace"].get<std::string>());
  if (!in) throw UsageError("cannot read " + c["trace"].get<std::string>());
  std::optional<std::uint64_t> seed;
  if (!c["seed"].is_null()) seed = get_seed(c);

  std::ofstream steps;
  StepLogSink sink;
  if (c.value("step_log", true)) {
    steps.open(run.output("steps.jsonl"));
    sink = [&steps](const json& rec) { steps << rec.dump() << '\n'; };
  }
  ReplayResult r;
  try {
    r = replay_trace(in, seed, sink);
  } catch (const TraceError& e) {
    if (e.kind() == TraceError::Kind::Schema) throw UsageError(e.what());
    throw DomainFailure(e.what());
  }
  run.write_json("replay.json", to_json(r));
  std::printf("replayed %llu ticks%s: %s, final hash %s\n", static_cast<unsigned long long>(r.ticks),
              r.partial ? " (partial: trace ends mid-record)" : "", to_string(r.termination).c_str(),
              hex64(r.final_hash).c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// compare

struct ModeSpec {
  std::string name;
  enum class Kind { Constant, Rl, Autonomous, Manual, Shared } kind;
  int level = 0;
};

std::vector<ModeSpec> parse_modes(const std::vector<std::string>& names) {
  std::vector<ModeSpec> out;
  auto add = [&](ModeSpec m) {
    for (const auto& o : out) {
      if (o.name == m.name) return;
    }
    out.push_back(std::move(m));
  };
  for (const auto& n : names) {
    if (n == "constant") {
      for (int l = 0; l < kNumSpeedLevels; ++l) add({"constant-" + std::to_string(l), ModeSpec::Kind::Constant, l});
    } else if (n.rfind("constant-", 0) == 0) {
      int l = -1;
      try {
        l = std::stoi(n.substr(9));
      } catch (...) {
      }
      if (l < 0 || l >= kNumSpeedLevels || n.size() != 10) throw UsageError("unknown mode '" + n + "'");
      add({n, ModeSpec::Kind::Constant, l});
    } else if (n == "rl") {
      add({n, ModeSpec::Kind::Rl});
    } else if (n == "autonomous") {
      add({n, ModeSpec::Kind::Autonomous});
    } else if (n == "manual") {
      add({n, ModeSpec::Kind::Manual});
    } else if (n == "shared") {
      add({n, ModeSpec::Kind::Shared});
    } else {
      throw UsageError("unknown mode '" + n + "' (constant, constant-K, rl, autonomous, manual, shared)");
    }
  }
  if (out.empty()) throw UsageError("no modes selected");
  return out;
}

int cmd_compare(Run& run) {
  json& c = run.config();
  normalize_paths(c, {"scenario", "checkpoint"});
  const auto modes = parse_modes(c.at("modes").get<std::vector<std::string>>());
  const Scenario sc = scenario_from(c);
  const SmoothPath path = plan_task_path(sc);
  const int n = get_num<int>(c, "n");
  if (n <= 0) throw UsageError("n must be positive");
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n; ++i) seeds.push_back(evaluation_seed(get_seed(c), i));

  QNetwork net;
  const auto ckpt = opt_string(c, "checkpoint");
  for (const auto& m : modes) {
    const bool needs = m.kind == ModeSpec::Kind::Rl || m.kind == ModeSpec::Kind::Autonomous || m.kind == ModeSpec::Kind::Shared;
    if (needs && !ckpt) throw UsageError("mode '" + m.name + "' needs --checkpoint");
  }
  if (ckpt) net = load_checkpoint(*ckpt);

  ModeRunOptions opts;
  opts.env = env_config_from_json(c.at("env"));
  opts.blend = blend_config_from_json(c.at("blend"));
  opts.operator_profile = operator_profile_from_json(c.at("operator"));
  opts.filter_beta = get_num<double>(c, "filter_beta");
  opts.haptic_scale = get_num<double>(c, "haptic_scale");

  std::ostringstream ep_csv, sum_csv;
  ep_csv << "mode,index,seed,success,termination,failure,completion_time\n";
  sum_csv << "mode,episodes,success_rate,mean_completion_time\n";
  json summary = json::object();
  std::printf("%-12s %8s %14s\n", "mode", "success", "mean_time_s");
  for (const auto& m : modes) {
    int ok = 0;
    double t_sum = 0;
    json rows = json::array();
    for (int i = 0; i < n; ++i) {
      bool success = false;
      Termination term = Termination::None;
      std::optional<FailureKind> failure;
      double t = 0;
      if (m.kind == ModeSpec::Kind::Constant || m.kind == ModeSpec::Kind::Rl) {
        // Path-following episode, as in training and evaluation.
        ConstantSpeedPolicy cp(m.level);
        QPolicy qp(net);
        SpeedPolicy& pol = m.kind == ModeSpec::Kind::Rl ? static_cast<SpeedPolicy&>(qp) : cp;
        const EvaluationReport r = evaluate(pol, sc, path, std::span(&seeds[i], 1), opts.env, get_seed(c));
        const auto& e = r.episodes.front();
        success = e.success;
        term = e.termination;
        failure = e.failure;
        t = e.completion_time;
      } else {
        QPolicy qp(net);
        const OperatingMode om = m.kind == ModeSpec::Kind::Manual       ? OperatingMode::Manual
                                 : m.kind == ModeSpec::Kind::Autonomous ? OperatingMode::Autonomous
                                                                        : OperatingMode::Shared;
        const ModeEpisodeResult r = run_mode_episode(om, sc, path, ckpt ? &qp : nullptr, seeds[i], opts);
        success = r.success;
        term = r.termination;
        failure = r.failure;
        t = r.completion_time;
      }
      if (success) {
        ++ok;
        t_sum += t;
      }
      ep_csv << m.name << ',' << i << ',' << seeds[i] << ',' << (success ? 1 : 0) << ',' << to_string(term) << ','
             << (failure ? to_string(*failure) : "") << ',' << fmt(t, 10) << '\n';
      rows.push_back({{"index", i},
                      {"seed", seeds[i]},
                      {"success", success},
                      {"termination", to_string(term)},
                      {"failure", failure ? json(to_string(*failure)) : json(nullptr)},
                      {"completion_time", t}});
    }
    const double rate = static_cast<double>(ok) / n;
    const double mean_t = ok ? t_sum / ok : std::numeric_limits<double>::quiet_NaN();
    sum_csv << m.name << ',' << n << ',' << fmt(rate, 10) << ',' << fmt(mean_t, 10) << '\n';
    summary[m.name] = {{"episodes", n},
                       {"success_rate", rate},
                       {"mean_completion_time", ok ? json(mean_t) : json(nullptr)},
                       {"runs", rows}};
    std::printf("%-12s %8.2f %14s\n", m.name.c_str(), rate, fmt(mean_t, 5).c_str());
  }
  run.write_text("episodes.csv", ep_csv.str());
  run.write_text("summary.csv", sum_csv.str());
  run.write_json("summary.json", {{"pairing", "every mode runs the same seed list"},
                                  {"seeds", seeds},
                                  {"scenario", sc.name},
                                  {"modes", summary}});
  return 0;
}

// ---------------------------------------------------------------------------

json session_defaults(const char* mode) {
  return {{"mode", mode},
          {"checkpoint", nullptr},
          {"level", 0},
          {"env", to_json(interactive_env())},
          {"blend", to_json(BlendConfig{})},
          {"filter_beta", 0.2},
          {"haptic_scale", 10.0}};
}

json defaults_for(const std::string& cmd) {
  json d = {{"scenario", nullptr}, {"seed", nullptr}};
  if (cmd == "plan") {
    d.update({{"map", nullptr},
              {"seed", 1},
              {"start", nullptr},
              {"goal", nullptr},
              {"robot_radius", nullptr},
              {"clearance", nullptr},
              {"manual_seeds", 1},
              {"operator", to_json(sketch_operator_profile())},
              {"cutoff_fraction", 0.25}});
  } else if (cmd == "train") {
    EnvConfig env;
    d.update({{"seed", 1}, {"train", to_json(TrainConfig{})}, {"env", to_json(env)}, {"eval_seed", 42},
              {"eval_episodes", 20}, {"quiet", false}});
  } else if (cmd == "eval") {
    d.update({{"seed", 42}, {"checkpoint", nullptr}, {"level", nullptr}, {"random", false}, {"episodes", 20},
              {"env", to_json(EnvConfig{})}, {"min_success", 0.0}});
  } else if (cmd == "simulate") {
    d.update(session_defaults("shared"));
    d.update({{"operator", to_json(teleop_operator_profile())}, {"max_ticks", 0}});
  } else if (cmd == "metrics") {
    d = {{"inputs", json::array()}, {"body", nullptr}, {"cutoff_fraction", 0.25}};
  } else if (cmd == "serve") {
    d.update(session_defaults("shared"));
    d.update({{"address", "127.0.0.1"},
              {"port", 8765},
              {"static_dir", nullptr},
              {"record_dir", nullptr},
              {"tick_rate_hz", 100.0},
              {"broadcast_hz", 30.0},
              {"duration", 0.0}});
  } else if (cmd == "replay") {
    d = {{"trace", nullptr}, {"seed", nullptr}, {"step_log", true}};
  } else if (cmd == "compare") {
    EnvConfig env;
    env.max_time = 400.0;
    env.record_traces = false;
    d.update({{"seed", 7},
              {"n", 20},
              {"modes", {"constant", "rl", "autonomous", "manual", "shared"}},
              {"checkpoint", nullptr},
              {"env", to_json(env)},
              {"blend", to_json(BlendConfig{})},
              {"operator", to_json(teleop_operator_profile())},
              {"filter_beta", 0.2},
              {"haptic_scale", 10.0}});
  }
  return d;
}

/// Flag values recorded only when given, then laid over the config.
struct Flags {
  std::string config, out, scenario, map, start, goal, checkpoint, mode, trace, address, static_dir, record_dir;
  std::uint64_t seed = 0, eval_seed = 0;
  double robot_radius = 0, clearance = 0, min_success = 0, duration = 0, tick_rate = 0, broadcast_rate = 0;
  int manual_seeds = 0, episodes = 0, level = 0, n = 0, body = 0, port = 0;
  std::uint64_t max_ticks = 0;
  std::vector<std::string> modes, inputs;
  bool random = false, quiet = false, no_step_log = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otgym: optical-tweezer microrobot gym"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersionString);
  Flags f;
  std::map<std::string, std::function<int(Run&)>> handlers = {
      {"plan", cmd_plan},     {"train", cmd_train},   {"eval", cmd_eval},   {"simulate", cmd_simulate},
      {"metrics", cmd_metrics}, {"serve", cmd_serve}, {"replay", cmd_replay}, {"compare", cmd_compare}};
  // (subcommand, config key, option) for flags that override config values.
  std::vector<std::tuple<CLI::App*, std::string, CLI::Option*, std::function<json()>>> overrides;
  auto over = [&](CLI::App* sub, const std::string& key, CLI::Option* opt, std::function<json()> value) {
    overrides.emplace_back(sub, key, opt, std::move(value));
  };
  auto common = [&](CLI::App* sub, bool with_scenario = true) {
    sub->add_option("--config", f.config, "JSON config file, or a manifest.json to repeat a run");
    sub->add_option("--out", f.out, "output directory (default otgym-runs/<command>)");
    if (with_scenario) {
      over(sub, "scenario", sub->add_option("--scenario", f.scenario, "scenario JSON (default: bundled)"),
           [&] { return json(f.scenario); });
    }
    over(sub, "seed", sub->add_option("--seed", f.seed, "seed"), [&] { return json(f.seed); });
  };
  auto session_flags = [&](CLI::App* sub) {
    over(sub, "mode", sub->add_option("--mode", f.mode, "manual | autonomous | shared"), [&] { return json(f.mode); });
    over(sub, "checkpoint", sub->add_option("--checkpoint", f.checkpoint, "speed policy checkpoint"),
         [&] { return json(f.checkpoint); });
    over(sub, "level", sub->add_option("--level", f.level, "constant speed level 0-5 when no checkpoint"),
         [&] { return json(f.level); });
  };

  auto* plan = app.add_subcommand("plan", "plan A* and B-spline paths and compare their metrics");
  common(plan);
  over(plan, "map", plan->add_option("--map", f.map, "map descriptor JSON (default: bundled chip)"),
       [&] { return json(f.map); });
  over(plan, "start", plan->add_option("--start", f.start, "start x,y in µm"), [&] {
    const Vec2 p = parse_point_flag(f.start, "--start");
    return json::array({p.x, p.y});
  });
  over(plan, "goal", plan->add_option("--goal", f.goal, "goal x,y in µm"), [&] {
    const Vec2 p = parse_point_flag(f.goal, "--goal");
    return json::array({p.x, p.y});
  });
  over(plan, "robot_radius", plan->add_option("--robot-radius", f.robot_radius, "µm"), [&] { return json(f.robot_radius); });
  over(plan, "clearance", plan->add_option("--clearance", f.clearance, "µm"), [&] { return json(f.clearance); });
  over(plan, "manual_seeds", plan->add_option("--manual-seeds", f.manual_seeds, "synthetic hand-drawn traces (0 = none)"),
       [&] { return json(f.manual_seeds); });

  auto* trn = app.add_subcommand("train", "train the DQN speed controller");
  common(trn);
  over(trn, "train", trn->add_option("--episodes", f.episodes, "training episodes"),
       [&] { return json{{"episodes", f.episodes}}; });
  over(trn, "eval_seed", trn->add_option("--eval-seed", f.eval_seed, "base seed of the post-training evaluation"),
       [&] { return json(f.eval_seed); });
  over(trn, "quiet", trn->add_flag("--quiet", f.quiet, "no progress lines"), [&] { return json(f.quiet); });

  auto* ev = app.add_subcommand("eval", "evaluate a speed policy over seeded episodes");
  common(ev);
  over(ev, "checkpoint", ev->add_option("--checkpoint", f.checkpoint, "trained checkpoint"),
       [&] { return json(f.checkpoint); });
  over(ev, "level", ev->add_option("--level", f.level, "constant speed level 0-5"), [&] { return json(f.level); });
  over(ev, "random", ev->add_flag("--random", f.random, "uniformly random levels"), [&] { return json(f.random); });
  over(ev, "episodes", ev->add_option("--episodes,-n", f.episodes, "episodes"), [&] { return json(f.episodes); });
  over(ev, "min_success", ev->add_option("--min-success", f.min_success, "exit 1 below this success rate"),
       [&] { return json(f.min_success); });

  auto* sim = app.add_subcommand("simulate", "run one headless session with the synthetic operator, recording a trace");
  common(sim);
  session_flags(sim);
  over(sim, "max_ticks", sim->add_option("--max-ticks", f.max_ticks, "stop early (0 = run to the end)"),
       [&] { return json(f.max_ticks); });

  auto* met = app.add_subcommand("metrics", "trajectory metrics of polylines or step logs");
  met->add_option("--config", f.config, "JSON config file or manifest");
  met->add_option("--out", f.out, "output directory");
  over(met, "inputs", met->add_option("inputs", f.inputs, "polyline .json or step log .jsonl files"),
       [&] { return json(f.inputs); });
  over(met, "body", met->add_option("--body", f.body, "body id to follow in step logs (default: first trap)"),
       [&] { return json(f.body); });

  auto* srv = app.add_subcommand("serve", "WebSocket session server");
  common(srv);
  session_flags(srv);
  over(srv, "address", srv->add_option("--address", f.address, "listen address"), [&] { return json(f.address); });
  over(srv, "port", srv->add_option("--port", f.port, "TCP port (0 = any free port)"), [&] { return json(f.port); });
  over(srv, "static_dir", srv->add_option("--static", f.static_dir, "directory of static files"),
       [&] { return json(f.static_dir); });
  over(srv, "record_dir", srv->add_option("--record", f.record_dir, "write a trace and step log per episode here"),
       [&] { return json(f.record_dir); });
  over(srv, "tick_rate_hz", srv->add_option("--tick-rate", f.tick_rate, "simulation ticks per second"),
       [&] { return json(f.tick_rate); });
  over(srv, "broadcast_hz", srv->add_option("--broadcast-rate", f.broadcast_rate, "state updates per second"),
       [&] { return json(f.broadcast_rate); });
  over(srv, "duration", srv->add_option("--duration", f.duration, "stop after this many seconds (0 = until signalled)"),
       [&] { return json(f.duration); });

  auto* rep = app.add_subcommand("replay", "re-execute a recorded trace and verify every tick");
  rep->add_option("--config", f.config, "JSON config file or manifest");
  rep->add_option("--out", f.out, "output directory");
  over(rep, "trace", rep->add_option("trace", f.trace, "trace .jsonl"), [&] { return json(f.trace); });
  over(rep, "seed", rep->add_option("--seed", f.seed, "refuse the trace unless it was recorded with this seed"),
       [&] { return json(f.seed); });
  over(rep, "step_log", rep->add_flag("--no-step-log", f.no_step_log, "skip writing the regenerated step log"),
       [&] { return json(!f.no_step_log); });

  auto* cmp = app.add_subcommand("compare", "paired-seed batch over operating modes");
  common(cmp);
  over(cmp, "modes", cmp->add_option("--modes", f.modes, "constant, constant-K, rl, autonomous, manual, shared")->delimiter(','),
       [&] { return json(f.modes); });
  over(cmp, "n", cmp->add_option("-n,--episodes", f.n, "episodes per mode"), [&] { return json(f.n); });
  over(cmp, "checkpoint", cmp->add_option("--checkpoint", f.checkpoint, "trained checkpoint for rl, autonomous, shared"),
       [&] { return json(f.checkpoint); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  std::vector<std::string> args(argv, argv + argc);
  std::optional<Run> run;
  try {
    run.emplace(cmd, defaults_for(cmd), args);
    if (!f.config.empty()) run->load_config(f.config);
    for (auto& [s, key, opt, value] : overrides) {
      if (s != sub || opt->count() == 0) continue;
      json v = value();
      json& slot = run->config()[key];
      if (slot.is_object() && v.is_object()) {
        slot.update(v);
      } else {
        slot = std::move(v);
      }
    }
    run->set_out(f.out);
    const int code = handlers.at(cmd)(*run);
    run->write_manifest(code);
    return code;
  } catch (const DomainFailure& e) {
    std::fprintf(stderr, "otgym %s: %s\n", cmd.c_str(), e.what());
    if (run && !run->out().empty()) run->write_manifest(1, e.what());
    return 1;
  } catch (const std::exception& e) {
    // Config, schema and input problems.
    std::fprintf(stderr, "otgym %s: %s\n", cmd.c_str(), e.what());
    if (run && !run->out().empty()) run->write_manifest(2, e.what());
    return 2;
  }
}
