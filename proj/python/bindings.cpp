// Python bindings. Structured results cross the boundary as JSON text and are
// decoded by the pure-Python wrapper in otgym/__init__.py.

#include <fstream>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "otgym/compare.hpp"
#include "otgym/metrics.hpp"
#include "otgym/planner.hpp"
#include "otgym/protocol.hpp"
#include "otgym/rl.hpp"
#include "otgym/session.hpp"
#include "otgym/shared.hpp"
#include "otgym/sim.hpp"
#include "otgym/version.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace otgym;

namespace {

using XY = std::pair<double, double>;

Vec2 v(const XY& p) { return {p.first, p.second}; }
XY xy(const Vec2& p) { return {p.x, p.y}; }

std::vector<Vec2> to_points(const std::vector<XY>& pts) {
  std::vector<Vec2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(v(p));
  return out;
}

std::vector<XY> from_points(std::span<const Vec2> pts) {
  std::vector<XY> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(xy(p));
  return out;
}

json parse_or_empty(const std::string& text) { return text.empty() ? json::object() : json::parse(text); }

Scenario scenario_at(const std::string& path) {
  return load_scenario(path.empty() ? default_scenario_path() : std::filesystem::path(path));
}

std::unique_ptr<SpeedPolicy> policy_for(const std::string& checkpoint, int level, QNetwork& net) {
  if (!checkpoint.empty()) {
    net = load_checkpoint(checkpoint);
    return std::make_unique<QPolicy>(net);
  }
  return std::make_unique<ConstantSpeedPolicy>(level);
}

std::string plan_json(const std::string& map_path, std::optional<XY> start, std::optional<XY> goal,
                      std::optional<double> robot_radius, std::optional<double> clearance) {
  const ChipMap map = load_chip_map(map_path.empty() ? default_chip_map_path() : std::filesystem::path(map_path));
  PlanRequest req = plan_request(map);
  if (start) req.start = v(*start);
  if (goal) req.goal = v(*goal);
  if (robot_radius) req.robot_radius = *robot_radius;
  if (clearance) req.clearance = *clearance;
  const PlanResult plan = plan_path(load_map_grid(map), req);
  json astar = json::array(), spline = json::array();
  for (const auto& p : plan.raw) astar.push_back({p.x, p.y});
  for (const auto& p : plan.smoothed.path.points()) spline.push_back({p.x, p.y});
  return json{{"astar", astar},
              {"bspline", spline},
              {"cost", plan.grid_path.cost.value()},
              {"dilation_radius", plan.dilation_radius},
              {"astar_metrics", to_json(compute_metrics(plan.raw))},
              {"bspline_metrics", to_json(compute_metrics(plan.smoothed.path.points()))}}
      .dump();
}

/// Session wrapper that owns its configuration conversion.
class PySession {
 public:
  explicit PySession(const std::string& config_json) : session_(make_config(parse_or_empty(config_json))) {}

  void start() { session_.start(); }
  void pause() { session_.pause(); }
  void reset(std::optional<std::uint64_t> seed) { session_.reset(seed); }
  void set_mode(const std::string& m) { session_.set_mode(operating_mode_from_string(m)); }
  std::string tick(std::optional<XY> delta) {
    std::optional<OperatorInput> in;
    if (delta) in = OperatorInput{v(*delta), 0.0, InputSource::Ui};
    const auto rec = session_.tick(in);
    return rec ? to_json(*rec).dump() : std::string("null");
  }
  bool done() const { return session_.done(); }
  std::uint64_t seed() const { return session_.seed(); }
  std::uint64_t ticks() const { return session_.ticks(); }
  std::string state() const { return session_.state_payload().dump(); }
  std::string haptic() const { return session_.haptic_payload().dump(); }
  std::string result() const { return session_.episode_result_payload().dump(); }
  std::string trace_header() const { return session_.trace_header().dump(); }
  std::string step_log() const { return session_.step_log().dump(); }

 private:
  static SessionConfig make_config(const json& j) {
    SessionConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& val = it.value();
      if (k == "scenario") c.scenario = val.get<std::string>();
      else if (k == "seed") { if (!val.is_null()) c.seed = val.get<std::uint64_t>(); }
      else if (k == "mode") c.mode = operating_mode_from_string(val.get<std::string>());
      else if (k == "checkpoint") { if (!val.is_null()) c.checkpoint = val.get<std::string>(); }
      else if (k == "level") c.constant_level = val.get<int>();
      else if (k == "env") c.env = env_config_from_json(val, c.env);
      else if (k == "blend") c.blend = blend_config_from_json(val);
      else if (k == "filter_beta") c.filter_beta = val.get<double>();
      else if (k == "haptic_scale") c.haptic_scale = val.get<double>();
      else throw std::invalid_argument("unknown session key '" + k + "'");
    }
    c.validate();
    return c;
  }

  Session session_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "otgym native core";
  m.attr("__version__") = kVersionString;
  m.attr("PROTOCOL_VERSION") = protocol::kVersion;
  m.attr("SPEED_LEVELS") = std::vector<double>(kSpeedLevels.begin(), kSpeedLevels.end());

  py::register_exception<PlanError>(m, "PlanError", PyExc_RuntimeError);
  py::register_exception<TraceError>(m, "TraceError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const protocol::ProtocolError& e) {
      // "code: message", split again on the Python side
      PyErr_SetString(PyExc_ValueError, (protocol::to_string(e.code()) + ": " + e.what()).c_str());
    } catch (const json::exception& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    }
  });

  m.def("data_dir", [] { return data_dir(); });

  m.def(
      "optical_force",
      [](XY trap, XY object, double stiffness, double delta, double far_a, double far_c) {
        OpticalTrap t;
        t.position = v(trap);
        t.stiffness = stiffness;
        t.delta = delta;
        t.far_a = far_a;
        t.far_c = far_c;
        return xy(optical_force(t, v(object)));
      },
      py::arg("trap"), py::arg("object"), py::arg("stiffness") = 0.455, py::arg("delta") = 0.446,
      py::arg("far_a") = 0.058, py::arg("far_c") = 0.01, "Trap force on an object, pN.");

  m.def(
      "brownian_samples",
      [](double diffusion, double dt, std::size_t n, std::uint64_t seed) {
        Rng rng(seed, Stream::Brownian);
        std::vector<XY> out;
        out.reserve(n);
        for (std::size_t i = 0; i < n; ++i) out.push_back(xy(brownian_displacement(diffusion, dt, rng)));
        return out;
      },
      py::arg("diffusion"), py::arg("dt"), py::arg("n"), py::arg("seed"));

  m.def(
      "alpha",
      [](double d, double d1, double d2, double near, double far) {
        BlendConfig c;
        c.d1 = d1;
        c.d2 = d2;
        c.alpha_near = near;
        c.alpha_far = far;
        return alpha(d, c);
      },
      py::arg("d"), py::arg("d1") = 1.0, py::arg("d2") = 2.0, py::arg("alpha_near") = 0.5,
      py::arg("alpha_far") = 0.1);
  m.def(
      "blend", [](XY dp_h, XY dp_r, double a, double tau) { return xy(blend(v(dp_h), v(dp_r), a, tau)); },
      py::arg("dp_h"), py::arg("dp_r"), py::arg("alpha"), py::arg("tau") = 1.0);

  m.def(
      "metrics_json",
      [](const std::vector<XY>& pts, double cutoff) { return to_json(compute_metrics(to_points(pts), cutoff)).dump(); },
      py::arg("points"), py::arg("cutoff_fraction") = 0.25);

  m.def("plan_json", &plan_json, py::arg("map") = "", py::arg("start") = py::none(), py::arg("goal") = py::none(),
        py::arg("robot_radius") = py::none(), py::arg("clearance") = py::none());

  m.def(
      "compare_paths_json",
      [](const std::vector<std::uint64_t>& seeds, const std::string& map_path) {
        const ChipMap map = load_chip_map(map_path.empty() ? default_chip_map_path() : std::filesystem::path(map_path));
        const PlanResult plan = plan_path(load_map_grid(map), plan_request(map));
        return to_json(compare_paths(plan, sketch_operator_profile(), seeds)).dump();
      },
      py::arg("seeds"), py::arg("map") = "");

  m.def("evaluation_seed", &evaluation_seed, py::arg("base"), py::arg("index"));

  m.def(
      "task_path",
      [](const std::string& scenario) { return from_points(plan_task_path(scenario_at(scenario)).points()); },
      py::arg("scenario") = "");

  m.def(
      "evaluate_json",
      [](const std::string& scenario, const std::vector<std::uint64_t>& seeds, const std::string& checkpoint,
         int level) {
        const Scenario sc = scenario_at(scenario);
        const SmoothPath path = plan_task_path(sc);
        QNetwork net;
        auto policy = policy_for(checkpoint, level, net);
        py::gil_scoped_release release;
        return to_json(evaluate(*policy, sc, path, seeds), false).dump();
      },
      py::arg("scenario"), py::arg("seeds"), py::arg("checkpoint") = "", py::arg("level") = 0);

  m.def(
      "train_json",
      [](const std::string& scenario, const std::string& config_json, const std::string& checkpoint_out) {
        const Scenario sc = scenario_at(scenario);
        const SmoothPath path = plan_task_path(sc);
        const TrainConfig tc = train_config_from_json(parse_or_empty(config_json));
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(sc, path, tc);
        }
        if (!checkpoint_out.empty()) save_checkpoint(checkpoint_out, r.best_net, {{"train_config", to_json(tc)}});
        return json{{"learning_curve", r.learning_curve},
                    {"episode_success", r.episode_success},
                    {"best_episode", r.best_episode},
                    {"best_score", r.best_score}}
            .dump();
      },
      py::arg("scenario"), py::arg("config") = "", py::arg("checkpoint_out") = "");

  m.def(
      "run_mode_episode_json",
      [](const std::string& mode, const std::string& scenario, std::uint64_t seed, const std::string& checkpoint,
         int level, const std::string& operator_json) {
        const Scenario sc = scenario_at(scenario);
        const SmoothPath path = plan_task_path(sc);
        QNetwork net;
        auto policy = policy_for(checkpoint, level, net);
        ModeRunOptions o;
        o.env.max_time = 400.0;
        o.env.record_traces = false;
        o.operator_profile = operator_profile_from_json(parse_or_empty(operator_json), teleop_operator_profile());
        py::gil_scoped_release release;
        return to_json(run_mode_episode(operating_mode_from_string(mode), sc, path, policy.get(), seed, o)).dump();
      },
      py::arg("mode"), py::arg("scenario"), py::arg("seed"), py::arg("checkpoint") = "", py::arg("level") = 0,
      py::arg("operator") = "");

  m.def(
      "replay_trace_json",
      [](const std::string& trace_path, std::optional<std::uint64_t> seed) {
        std::ifstream in(trace_path);
        if (!in) throw std::invalid_argument("cannot read " + trace_path);
        return to_json(replay_trace(in, seed)).dump();
      },
      py::arg("trace"), py::arg("seed") = py::none());

  m.def(
      "parse_envelope_json",
      [](const std::string& text, bool check_payload) {
        const auto e = protocol::parse_envelope(text);
        if (check_payload) protocol::validate_client_message(e);
        return json{{"type", e.type}, {"seq", e.seq}, {"payload", e.payload}}.dump();
      },
      py::arg("text"), py::arg("check_payload") = false);

  py::class_<PySession>(m, "Session")
      .def(py::init<const std::string&>(), py::arg("config") = "")
      .def("start", &PySession::start)
      .def("pause", &PySession::pause)
      .def("reset", &PySession::reset, py::arg("seed") = py::none())
      .def("set_mode", &PySession::set_mode)
      .def("tick_json", &PySession::tick, py::arg("delta") = py::none())
      .def_property_readonly("done", &PySession::done)
      .def_property_readonly("seed", &PySession::seed)
      .def_property_readonly("ticks", &PySession::ticks)
      .def("state_json", &PySession::state)
      .def("haptic_json", &PySession::haptic)
      .def("result_json", &PySession::result)
      .def("trace_header_json", &PySession::trace_header)
      .def("step_log_json", &PySession::step_log);
}
