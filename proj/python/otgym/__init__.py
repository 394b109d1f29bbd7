"""Optical-tweezer microrobot gym: simulation, planning, DQN speed control and
shared control, backed by the native ``_core`` extension."""

import json as _json
import os as _os

# Installed wheels carry the scenarios and maps next to the package.
_packaged = _os.path.join(_os.path.dirname(__file__), "data")
if "OTGYM_DATA_DIR" not in _os.environ and _os.path.isdir(_packaged):
    _os.environ["OTGYM_DATA_DIR"] = _packaged

from . import _core
from ._core import (  # noqa: F401
    PROTOCOL_VERSION,
    SPEED_LEVELS,
    PlanError,
    TraceError,
    __version__,
    alpha,
    blend,
    brownian_samples,
    data_dir,
    evaluation_seed,
    optical_force,
    task_path,
)


def _opt(text):
    return _json.loads(text)


def metrics(points, cutoff_fraction=0.25):
    """Path length, mean curvature, angular deviation and high-frequency energy ratio."""
    return _opt(_core.metrics_json([tuple(p) for p in points], cutoff_fraction))


def plan(map="", start=None, goal=None, robot_radius=None, clearance=None):
    """A* and B-spline paths on a map descriptor (default: bundled chip map)."""
    return _opt(_core.plan_json(str(map), start, goal, robot_radius, clearance))


def compare_paths(seeds, map=""):
    """Metrics of the B-spline, A* and synthetic hand-drawn paths, with orderings."""
    return _opt(_core.compare_paths_json(list(seeds), str(map)))


def evaluate(scenario="", seeds=(), checkpoint="", level=0):
    return _opt(_core.evaluate_json(str(scenario), list(seeds), str(checkpoint), level))


def train(scenario="", config=None, checkpoint_out=""):
    return _opt(_core.train_json(str(scenario), _json.dumps(config or {}), str(checkpoint_out)))


def run_mode_episode(mode, scenario="", seed=0, checkpoint="", level=0, operator=None):
    return _opt(_core.run_mode_episode_json(mode, str(scenario), seed, str(checkpoint), level,
                                            _json.dumps(operator or {})))


def replay_trace(path, seed=None):
    return _opt(_core.replay_trace_json(str(path), seed))


class ProtocolError(ValueError):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


def parse_envelope(text, check_payload=True):
    """Validates a client message the way the server does; raises ProtocolError."""
    try:
        return _opt(_core.parse_envelope_json(text, check_payload))
    except ValueError as e:
        code, _, msg = str(e).partition(": ")
        raise ProtocolError(code, msg) from None


class Session:
    """Tick-by-tick interactive episode (the object the WebSocket server drives)."""

    def __init__(self, **config):
        for key in ("scenario", "checkpoint"):
            if config.get(key) is not None:
                config[key] = str(config[key])
        self._s = _core.Session(_json.dumps(config))

    def start(self):
        self._s.start()

    def pause(self):
        self._s.pause()

    def reset(self, seed=None):
        self._s.reset(seed)

    def set_mode(self, mode):
        self._s.set_mode(mode)

    def tick(self, delta=None):
        return _opt(self._s.tick_json(None if delta is None else tuple(delta)))

    @property
    def done(self):
        return self._s.done

    @property
    def seed(self):
        return self._s.seed

    @property
    def ticks(self):
        return self._s.ticks

    def state(self):
        return _opt(self._s.state_json())

    def haptic(self):
        return _opt(self._s.haptic_json())

    def result(self):
        return _opt(self._s.result_json())

    def trace_header(self):
        return _opt(self._s.trace_header_json())

    def step_log(self):
        return _opt(self._s.step_log_json())
