import csv
import json
import os

import numpy as np
import pytest

from hypokinetic import cli
from hypokinetic.verify.density import DensityEstimate

TINY = """\
model: {name: kinetic, potential: quartic, phase_dim: 1}
subordinator:
  family: {family: tempered_stable, alpha: 0.5, lam: 1.0}
run: {seed: 5, t: 0.2, h: 0.01, n_paths: 1500, x0: [0.5, 0.0]}
probes:
  - {kind: hypotheses, n_points: 64}
  - {kind: flow_moments, t_grid: [0.2, 0.05], n_steps: 8}
  - {kind: small_deviation}
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_empty_probe_list_writes_manifest_only(tmp_path):
    cfg = _write(tmp_path, "model: {name: free}\nrun: {seed: 0}\nprobes: []\n")
    out = tmp_path / "out"
    assert cli.run_experiment(cfg, out=str(out)) == 0
    assert sorted(os.listdir(out)) == ["manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0 and len(man["config_hash"]) == 64 and "philox" in man["rng_scheme"]


def _snapshot(d):
    return {n: (d / n).read_bytes() for n in sorted(os.listdir(d))}


def test_reruns_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, TINY)
    out = tmp_path / "out"
    assert cli.run_experiment(cfg, out=str(out)) == 0
    first = _snapshot(out)
    assert cli.run_experiment(cfg, out=str(out), workers=2) == 0
    assert "summary.json" in first and any(n.endswith(".csv") for n in first)
    assert _snapshot(out) == first


def test_failure_sets_exit_code(tmp_path):
    cfg = _write(tmp_path, TINY.replace("quartic", "degenerate"))
    assert cli.run_experiment(cfg, out=str(tmp_path / "o")) == 1
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["overall"] == "FAIL"


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "model: {name: free}\nrun: {seed: 0, bogus: 1}\n")
    assert cli.main(["verify", "--config", cfg]) == 2
    assert "line 2" in capsys.readouterr().err


def test_density_grid_single_point(tmp_path):
    est = DensityEstimate(np.array([[0.25, -1.0]]), np.array([0.125]), np.ones(2), 1000)
    path = tmp_path / "d.csv"
    cli.emit_density_grid(None, est, path)
    assert path.read_text() == "coord_1,coord_2,density\n2.5000000000000000e-01,-1.0000000000000000e+00,1.2500000000000000e-01\n"


def test_density_grid_ten_by_ten(tmp_path):
    ax = np.linspace(-1, 1, 10)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    perm = np.random.default_rng(0).permutation(100)
    est = DensityEstimate(pts[perm], np.exp(-np.sum(pts[perm] ** 2, axis=1)), np.ones(2), 1000)
    path = tmp_path / "d.csv"
    cli.emit_density_grid(None, est, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["coord_1", "coord_2", "density"]
    body = np.array(rows[1:], dtype=float)
    assert body.shape == (100, 3)
    np.testing.assert_array_equal(body[:, :2], pts)
    first = path.read_bytes()
    cli.emit_density_grid(None, est, path)
    assert path.read_bytes() == first


def test_simulate_covariance_density_commands(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    for cmd, fname in (("simulate", "states.csv"), ("covariance", "covariance.csv"), ("density", "density.csv")):
        out = tmp_path / cmd
        extra = ["--grid-points", "20"] if cmd == "density" else []
        assert cli.main([cmd, "--config", cfg, "--out", str(out), "--paths", "1200", "--seed", "9"] + extra) == 0
        assert (out / fname).exists()
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == 9 and man["config"]["run"]["n_paths"] == 1200
    header = (tmp_path / "simulate" / "states.csv").read_text().splitlines()[0]
    assert header == "path,coord_1,coord_2,sup_lyapunov,completed"


def test_presets_command(capsys):
    assert cli.main(["presets"]) == 0
    assert capsys.readouterr().out.split() == sorted(cli.PRESETS)
    assert cli.main(["presets", "smoke"]) == 0
    assert "free" in capsys.readouterr().out
    assert cli.main(["presets", "nope"]) == 2


def test_verify_prints_verdicts(tmp_path, capsys):
    cfg = _write(tmp_path, TINY)
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path / "v")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["PASS", "hypotheses"]


def test_start_points_hit_levels():
    from hypokinetic.model import builtin_kinetic_model

    m = builtin_kinetic_model("quadratic", 1)
    pts = cli.start_points(m)
    np.testing.assert_allclose(m.lyapunov(np.array(pts)), [0.5, 1.0, 1.5, 2.0, 2.5], rtol=1e-12)


def test_subordinator_lengths_checked(tmp_path):
    cfg = _write(tmp_path, "model: {name: free, dim: 2}\nsubordinator: {drift: [1.0]}\nrun: {seed: 0}\nprobes: [{kind: clock_moments}]\n")
    assert cli.main(["verify", "--config", cfg, "--out", str(tmp_path / "x")]) == 2


def test_missing_source(capsys):
    assert cli.main(["simulate"]) == 2
