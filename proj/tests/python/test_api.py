import json
import math

import pytest

import otgym


def test_version_and_constants():
    assert otgym.__version__
    assert otgym.PROTOCOL_VERSION == 1
    assert len(otgym.SPEED_LEVELS) == 6
    assert otgym.SPEED_LEVELS[0] == pytest.approx(0.270)
    assert otgym.SPEED_LEVELS[-1] == pytest.approx(0.510)


def test_optical_force_worked_values():
    fx, fy = otgym.optical_force((0.0, 0.0), (0.2, 0.0))
    assert fx == pytest.approx(-0.091, rel=1e-12)
    assert fy == 0.0
    fx, fy = otgym.optical_force((0.0, 0.0), (0.0, 1.0))
    assert fy == pytest.approx(-0.068, rel=1e-12)


def test_alpha_and_blend():
    assert [otgym.alpha(d) for d in (0.5, 1.0, 1.5, 2.0, 3.0)] == [0.5, 0.5, 0.3, 0.1, 0.1]
    assert otgym.blend((1.0, 0.0), (0.0, 1.0), 0.5) == pytest.approx((0.5, 0.5))
    assert otgym.blend((3.0, 1.0), (-2.0, 7.0), 0.3, tau=0.0) == (0.0, 0.0)


def test_brownian_variance():
    samples = otgym.brownian_samples(0.05, 0.01, 20000, 7)
    var = sum(x * x for x, _ in samples) / len(samples)
    assert var == pytest.approx(2 * 0.05 * 0.01, rel=0.05)
    assert samples == otgym.brownian_samples(0.05, 0.01, 20000, 7)


def test_metrics_of_a_corner():
    m = otgym.metrics([(0, 0), (1, 0), (1, 1)] + [(1, 1 + i) for i in range(1, 8)])
    assert m["total_length"] == pytest.approx(9.0)
    assert m["angular_deviation"] > 0


def test_plan_on_bundled_map():
    p = otgym.plan()
    assert p["cost"] == pytest.approx(196.42, abs=0.01)
    assert p["astar_metrics"]["total_length"] == pytest.approx(p["cost"])
    assert p["bspline_metrics"]["total_length"] < p["astar_metrics"]["total_length"]
    assert p["astar"][0] == pytest.approx([2.0, 130.0])
    assert p["bspline"][-1] == pytest.approx([157.0, 30.0])


def test_plan_rejects_occupied_goal():
    with pytest.raises(otgym.PlanError):
        otgym.plan(goal=(80.0, 10.0))


def test_compare_paths_orderings():
    seeds = [otgym.evaluation_seed(101, i) for i in range(2)]
    c = otgym.compare_paths(seeds)
    assert all(c["orderings"].values())


def test_session_tick_and_replay(tmp_path):
    s = otgym.Session(seed=4, mode="shared", level=1)
    assert s.seed == 4
    assert s.tick((0.001, 0.0)) is None  # paused
    s.start()
    lines = [json.dumps(s.trace_header())]
    for i in range(50):
        lines.append(json.dumps(s.tick((0.001 * (i % 2), 0.0))))
    state = s.state()
    assert state["tick"] == 50
    assert state["mode"] == "shared"
    assert 0.1 <= state["alpha"] <= 0.5
    trace = tmp_path / "t.jsonl"
    trace.write_text("\n".join(lines) + "\n")
    r = otgym.replay_trace(trace, seed=4)
    assert r["ticks"] == 50
    assert not r["partial"]
    with pytest.raises(otgym.TraceError):
        otgym.replay_trace(trace, seed=5)


def test_run_mode_episode_is_deterministic():
    a = otgym.run_mode_episode("autonomous", seed=3, level=3)
    b = otgym.run_mode_episode("autonomous", seed=3, level=3)
    assert a == b
    assert a["mode"] == "autonomous"
    assert math.isfinite(a["completion_time"])


def test_parse_envelope_errors():
    assert otgym.parse_envelope('{"type":"start","seq":1,"payload":{}}')["type"] == "start"
    with pytest.raises(otgym.ProtocolError) as e:
        otgym.parse_envelope('{"type":"teleport","seq":1,"payload":{}}')
    assert e.value.code == "unknown_type"
    with pytest.raises(otgym.ProtocolError) as e:
        otgym.parse_envelope("{nope")
    assert e.value.code == "bad_json"
