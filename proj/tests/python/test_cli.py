import json
import subprocess

import pytest


def run(bin_, *args, cwd=None):
    return subprocess.run([str(bin_), *map(str, args)], capture_output=True, text=True, cwd=cwd, timeout=300)


def test_plan_prints_one_row_per_path(otgym_bin, tmp_path):
    r = run(otgym_bin, "plan", "--out", tmp_path / "plan", "--manual-seeds", 1)
    assert r.returncode == 0, r.stderr
    rows = [line.split()[0] for line in r.stdout.splitlines()[1:] if line.strip()]
    assert rows == ["astar", "bspline", "manual"]
    for name in ("astar.json", "bspline.json", "manual_0.json", "metrics.csv", "metrics.json", "manifest.json"):
        assert (tmp_path / "plan" / name).exists()
    manifest = json.loads((tmp_path / "plan" / "manifest.json").read_text())
    assert manifest["exit_code"] == 0
    assert manifest["command"] == "plan"


def test_plan_exit_codes(otgym_bin, tmp_path):
    r = run(otgym_bin, "plan", "--out", tmp_path / "a", "--goal", "80,10", "--manual-seeds", 0)
    assert r.returncode == 1
    assert "no path" in r.stderr or "no path" in r.stdout
    r = run(otgym_bin, "plan", "--out", tmp_path / "b", "--bogus")
    assert r.returncode == 2


def test_smaller_robot_never_lengthens_astar(otgym_bin, tmp_path):
    def astar_len(out, *extra):
        r = run(otgym_bin, "plan", "--out", out, "--manual-seeds", 0, *extra)
        assert r.returncode == 0, r.stderr
        return json.loads((out / "metrics.json").read_text())["rows"]["astar"]["total_length"]

    assert astar_len(tmp_path / "zero", "--robot-radius", 0) <= astar_len(tmp_path / "default")


def test_manifest_rerun_is_identical(otgym_bin, tmp_path):
    first = tmp_path / "first"
    assert run(otgym_bin, "plan", "--out", first, "--manual-seeds", 2, "--seed", 9).returncode == 0
    second = tmp_path / "second"
    r = run(otgym_bin, "plan", "--config", first / "manifest.json", "--out", second)
    assert r.returncode == 0, r.stderr
    names = sorted(p.name for p in first.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in second.iterdir() if p.name != "manifest.json")
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_compare_writes_rows_per_mode(otgym_bin, tmp_path):
    out = tmp_path / "cmp"
    r = run(otgym_bin, "compare", "--out", out, "-n", 2, "--modes", "constant-3,manual")
    assert r.returncode == 0, r.stderr
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == summary["seeds"][:2] and len(summary["seeds"]) == 2
    episodes = (out / "episodes.csv").read_text().strip().splitlines()
    assert len(episodes) == 1 + 2 * 2
    r = run(otgym_bin, "compare", "--out", tmp_path / "x", "-n", 1, "--modes", "rl")
    assert r.returncode == 2  # rl needs a checkpoint


def test_train_eval_simulate_replay(otgym_bin, tmp_path):
    train = tmp_path / "train"
    r = run(otgym_bin, "train", "--out", train, "--episodes", 6, "--quiet")
    assert r.returncode == 0, r.stderr
    assert (train / "best.ckpt").read_bytes()[:8] == b"OTGYMQ1\n"
    curve = (train / "learning_curve.csv").read_text().strip().splitlines()
    assert len(curve) == 1 + 6

    r = run(otgym_bin, "eval", "--out", tmp_path / "eval", "--checkpoint", train / "best.ckpt", "-n", 2)
    assert r.returncode == 0, r.stderr
    report = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert 0.0 <= report["success_rate"] <= 1.0

    sim = tmp_path / "sim"
    r = run(otgym_bin, "simulate", "--out", sim, "--seed", 5, "--max-ticks", 400)
    assert r.returncode == 0, r.stderr
    r = run(otgym_bin, "replay", sim / "trace.jsonl", "--seed", 5, "--out", tmp_path / "rep")
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "rep" / "steps.jsonl").read_bytes() == (sim / "steps.jsonl").read_bytes()
    r = run(otgym_bin, "replay", sim / "trace.jsonl", "--seed", 6, "--out", tmp_path / "rep2")
    assert r.returncode == 1

    r = run(otgym_bin, "metrics", sim / "steps.jsonl", "--out", tmp_path / "met")
    assert r.returncode == 0, r.stderr


@pytest.mark.parametrize("args", [["eval", "-n", "1"], ["replay", "/nonexistent/trace.jsonl"]])
def test_usage_errors_exit_2(otgym_bin, tmp_path, args):
    r = run(otgym_bin, *args, "--out", tmp_path / "o")
    assert r.returncode == 2
