"""Command line: simulate, covariance, density, verify, presets.

Every output file is a deterministic function of (config, seed): CSV numbers
use a fixed 17-significant-digit format, JSON is written with sorted keys,
and no timestamps are recorded.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np
from scipy.stats import qmc

from . import __version__
from . import rng as _rng
from .config import ConfigError, ExperimentConfig, emit_config, load_config, parse_config, probe_params
from .model import ModelSpec, check_hypotheses, direction_mesh, model_from_config
from .subordinator import SubordinatorSpec, ZeroFamily, family_from_dict
from .verify import probes as P
from .verify.density import DensityEstimate, kde_tensor_grid, padded_box_axes
from .verify.ensemble import default_workers, ensemble_run
from .verify.generator import CosineWave, GaussianBump
from .verify.probe_result import FAIL, PASS, ProbeResult, combine, verdict_from

NUMBER_FORMAT = "{:.16e}"

PRESETS = {
    "smoke": """\
# Gaussian case: b = 0, A = I, S_t = t. Every probe has a closed-form reference.
model: {name: free, dim: 2}
subordinator:
  drift: 1.0
  family: {family: zero}
run: {seed: 0, t: 1.0, h: 0.01, n_paths: 10000}
probes:
  - {kind: hypotheses}
  - {kind: fokker_planck, h_time: 0.05}
  - {kind: exp_moment, p: 1.0}
  - {kind: small_deviation, eps: [0.01, 0.05, 0.1], delta: 0.9}
  - {kind: covariance_scaling, n_steps: 64}
  - {kind: flow_moments, n_steps: 16}
  - {kind: clock_moments}
  - {kind: density}
output: {directory: results/smoke}
""",
    "quartic": """\
# Quartic stochastic Hamiltonian system with tempered-stable velocity noise.
model: {name: kinetic, potential: quartic, phase_dim: 1}
subordinator:
  drift: 0.0
  family: {family: tempered_stable, alpha: 0.5, lam: 1.0}
run: {seed: 1, t: 0.5, h: 0.001, n_paths: 100000, x0: [0.5, 0.0]}
probes:
  - {kind: hypotheses}
  - kind: fokker_planck
    h_time: 0.05
    t: 0.25
    test_functions:
      - {kind: bump, center: [0.5, 0.0], width: 1.0}
      - {kind: bump, center: [0.0, 0.5], width: 0.7}
      - {kind: bump, center: [1.0, -0.5], width: 1.0}
  - {kind: flow_moments}
  - {kind: covariance_scaling}
  - {kind: density}
output: {directory: results/quartic}
""",
    "stable-divergence": """\
# Pure stable clock: no exponential moments, so the sup-Lyapunov exponential mean diverges.
model: {name: kinetic, potential: quadratic, phase_dim: 1}
subordinator:
  drift: 0.0
  family: {family: stable, alpha: 0.5}
run: {seed: 2, t: 1.0, h: 0.001, n_paths: 10000, x0: [1.0, 0.0]}
probes:
  - {kind: exp_moment, p: 5.0, expect_fail: true, x0_list: [[1.0, 0.0]]}
output: {directory: results/stable-divergence}
""",
}


# ------------------------------------------------------------- build

def build_model(cfg: ExperimentConfig) -> ModelSpec:
    try:
        return model_from_config(cfg.model.name, cfg.model.params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def build_subordinator(cfg: ExperimentConfig, model: ModelSpec) -> SubordinatorSpec:
    s = cfg.subordinator
    d = model.dim
    try:
        if s.components is not None:
            comps = [family_from_dict(c) for c in s.components]
        else:
            fam = family_from_dict(s.family)
            active = model.active_noise
            comps = [fam if active[i] else ZeroFamily() for i in range(d)]
        if isinstance(s.drift, list):
            drift = list(s.drift)
        else:
            drift = [s.drift if model.active_noise[i] else 0.0 for i in range(d)]
        if len(comps) != d or len(drift) != d:
            raise ValueError(f"subordinator needs {d} components and drifts for a {d}-dimensional model")
        return SubordinatorSpec(tuple(drift), tuple(comps))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"subordinator: {exc}") from exc


def initial_state(cfg: ExperimentConfig, model: ModelSpec) -> np.ndarray:
    if cfg.run.x0 is None:
        return np.zeros(model.dim)
    x0 = np.asarray(cfg.run.x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ConfigError(f"run.x0 must have {model.dim} entries")
    return x0


def start_points(model: ModelSpec, levels=(0.5, 1.0, 1.5, 2.0, 2.5)) -> list:
    """Points with ``H = level`` on distinct directions, found by bisection along rays."""
    dirs = direction_mesh(model.dim)
    pick = dirs[np.linspace(0, len(dirs) - 1, len(levels) + 1).astype(int)[:-1]]
    pts = []
    for lev, u in zip(levels, pick):
        lo, hi = 0.0, 1.0
        while model.lyapunov(hi * u) < lev:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if model.lyapunov(mid * u) < lev else (lo, mid)
        pts.append((0.5 * (lo + hi) * u).tolist())
    return pts


def _test_functions(params, x0, model):
    tfs = params.get("test_functions")
    if tfs is None:
        shift = np.zeros(model.dim)
        shift[-1] = 0.5
        return [GaussianBump(tuple(x0), 1.0), GaussianBump(tuple(x0 + shift), 0.7), GaussianBump(tuple(x0 - shift), 1.0)]
    out = []
    for tf in tfs:
        if tf["kind"] == "bump":
            out.append(GaussianBump(tuple(float(c) for c in tf["center"]), float(tf.get("width", 1.0))))
        else:
            out.append(CosineWave(tuple(float(c) for c in tf["w"]), float(tf.get("phase", 0.0))))
    return out


# ------------------------------------------------------------- probes

def _hypotheses(cfg, model, sub, x0, params, workers):
    pts = qmc.Sobol(model.dim, scramble=False).random(int(params["n_points"]))
    cloud = (2.0 * pts - 1.0) * float(params["radius"])
    report = check_hypotheses(model, cloud, np.geomspace(1.0, 1e3, 8))
    rows = [
        {
            "condition": r.condition,
            "worst_ratio": r.worst_ratio,
            "passed": "" if r.passed is None else r.passed,
            "witness": [] if r.witness is None else [float(v) for v in np.ravel(r.witness)],
            "note": r.note,
        }
        for r in report.results
    ]
    worst = max((r.worst_ratio for r in report.results if r.passed is not None), default=0.0)
    return [ProbeResult("hypotheses", worst, math.nan, 1.0, verdict_from(report.passed), rows,
                        {"failures": [r.condition for r in report.failures()]})]


def _fokker_planck(cfg, model, sub, x0, params, workers):
    t = params["t"] if params["t"] is not None else 0.5 * cfg.run.t
    return P.fokker_planck_residual(
        model, sub, x0, t, params["h_time"], _test_functions(params, x0, model), cfg.run.n_paths,
        seed=cfg.run.seed, h=cfg.run.h, bias_constant=params["bias_constant"], workers=workers,
    )


def _exp_moment(cfg, model, sub, x0, params, workers):
    x0s = params["x0_list"] if params["x0_list"] is not None else start_points(model)
    return [P.exp_moment_probe(
        model, sub, [np.asarray(x, dtype=float) for x in x0s], cfg.run.t, cfg.run.n_paths, params["p"],
        seed=cfg.run.seed, h=cfg.run.h, ratio_bound=params["ratio_bound"], expect_fail=params["expect_fail"],
        workers=workers,
    )]


def _small_deviation(cfg, model, sub, x0, params, workers):
    f = params["f"] if params["f"] is not None else [1.0] * sub.dim
    active = model.active_noise
    f = [fi if active[i] else 0.0 for i, fi in enumerate(f)]
    active_sub = SubordinatorSpec(
        tuple(d for d, a in zip(sub.drift, active) if a), tuple(c for c, a in zip(sub.components, active) if a)
    )
    f_act = [fi for fi, a in zip(f, active) if a]
    return P.small_deviation_probe(
        active_sub, f_act, cfg.run.t, params["eps"], params["delta"], cfg.run.n_paths,
        seed=cfg.run.seed, n_steps=params["n_steps"],
    )


def _covariance_scaling(cfg, model, sub, x0, params, workers):
    return [P.covariance_scaling_probe(
        model, sub, x0, params["t_grid"], cfg.run.n_paths, seed=cfg.run.seed,
        n_steps=params["n_steps"], margin=params["margin"], workers=workers,
    )]


def _flow_moments(cfg, model, sub, x0, params, workers):
    return [P.flow_moment_probe(
        model, sub, x0, params["t_grid"], cfg.run.n_paths, p=params["p"], eps_grid=params["eps_grid"],
        seed=cfg.run.seed, n_steps=params["n_steps"], bound_factor=params["bound_factor"], workers=workers,
    )]


def _clock_moments(cfg, model, sub, x0, params, workers):
    return [P.subordinator_moment_probe(
        sub, params["t_grid"], params["p"], cfg.run.n_paths, seed=cfg.run.seed, bound_factor=params["bound_factor"]
    )]


def _density(cfg, model, sub, x0, params, workers):
    t = params["t"] if params["t"] is not None else cfg.run.t
    results, _, _ = P.density_probe(
        model, sub, x0, t, cfg.run.n_paths, seed=cfg.run.seed, h=cfg.run.h,
        beta3_min=params["beta3_min"], mass_range=tuple(params["mass_range"]), workers=workers,
    )
    return results


PROBE_RUNNERS = {
    "hypotheses": _hypotheses,
    "fokker_planck": _fokker_planck,
    "exp_moment": _exp_moment,
    "small_deviation": _small_deviation,
    "covariance_scaling": _covariance_scaling,
    "flow_moments": _flow_moments,
    "clock_moments": _clock_moments,
    "density": _density,
}


# ------------------------------------------------------------- output

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return NUMBER_FORMAT.format(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return json.dumps(_jsonable(list(v)), separators=(",", ":"))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_table(path, rows) -> None:
    """CSV with the union of row keys as columns, in first-seen order."""
    cols: list = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in cols])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def emit_density_grid(result, estimate: DensityEstimate, path) -> None:
    """``coord_1..coord_d,density`` rows in lexicographic order of the grid points."""
    pts = np.asarray(estimate.points, dtype=float)
    order = np.lexsort(pts.T[::-1])
    d = pts.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"coord_{j + 1}" for j in range(d)] + ["density"])
        for i in order:
            w.writerow([NUMBER_FORMAT.format(v) for v in pts[i]] + [NUMBER_FORMAT.format(float(estimate.values[i]))])


def manifest(cfg: ExperimentConfig) -> dict:
    return {
        "package": "hypokinetic",
        "version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.run.seed,
        "rng_scheme": _rng.SCHEME,
        "block_size": _rng.BLOCK_SIZE,
        "config": cfg.to_dict(),
    }


# ------------------------------------------------------------- commands

def apply_overrides(cfg: ExperimentConfig, seed=None, out=None, paths=None, step=None) -> ExperimentConfig:
    run = cfg.run
    if seed is not None:
        run = replace(run, seed=int(seed))
    if paths is not None:
        run = replace(run, n_paths=int(paths))
    if step is not None:
        run = replace(run, h=float(step))
    output = cfg.output if out is None else replace(cfg.output, directory=str(out))
    return replace(cfg, run=run, output=output)


def run_probes(cfg: ExperimentConfig, workers: int | None = None) -> list:
    model = build_model(cfg)
    sub = build_subordinator(cfg, model)
    x0 = initial_state(cfg, model)
    results = []
    for probe in cfg.probes:
        for r in PROBE_RUNNERS[probe.kind](cfg, model, sub, x0, probe_params(probe), workers):
            if probe.id:
                r.probe = f"{probe.id}:{r.probe}"
            results.append(r)
    return results


def run_experiment(config, out=None, seed=None, paths=None, step=None, workers=None) -> int:
    """Run the configured probes and write tables, a summary and a manifest.

    Returns 0 when every probe passes or is inconclusive and 1 on any failure.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    cfg = apply_overrides(cfg, seed, out, paths, step)
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    results = run_probes(cfg, workers)
    overall = combine([r.verdict for r in results]) if results else PASS
    if "csv" in cfg.output.formats:
        for r in results:
            safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in r.probe)
            write_table(os.path.join(out_dir, f"{safe}.csv"), r.table)
    if "json" in cfg.output.formats and results:
        write_json(
            os.path.join(out_dir, "summary.json"),
            {"overall": overall, "probes": [dict(r.summary(), details=r.details) for r in results]},
        )
    write_json(os.path.join(out_dir, "manifest.json"), manifest(cfg))
    return 1 if overall == FAIL else 0


def _resolve(args) -> ExperimentConfig:
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; known: {sorted(PRESETS)}")
        cfg = parse_config(PRESETS[args.preset])
    elif args.config:
        cfg = load_config(args.config)
    else:
        raise ConfigError("either --config or --preset is required")
    return apply_overrides(cfg, args.seed, args.out, args.paths, args.step)


def _cmd_simulate(args) -> int:
    cfg = _resolve(args)
    model = build_model(cfg)
    sub = build_subordinator(cfg, model)
    res = ensemble_run(model, sub, initial_state(cfg, model), cfg.run.t, cfg.run.h, cfg.run.n_paths, cfg.run.seed,
                       flows=False)
    os.makedirs(cfg.output.directory, exist_ok=True)
    rows = []
    for i in range(res.n_paths):
        row = {"path": i}
        row.update({f"coord_{j + 1}": float(v) for j, v in enumerate(res.states[i])})
        row.update({"sup_lyapunov": float(res.lyapunov_sup[i]), "completed": bool(res.alive[i])})
        rows.append(row)
    write_table(os.path.join(cfg.output.directory, "states.csv"), rows)
    write_json(os.path.join(cfg.output.directory, "manifest.json"), manifest(cfg))
    print(f"{res.completed} paths completed, {res.aborted} aborted")
    return 0


def _cmd_covariance(args) -> int:
    cfg = _resolve(args)
    model = build_model(cfg)
    sub = build_subordinator(cfg, model)
    res = ensemble_run(model, sub, initial_state(cfg, model), cfg.run.t, cfg.run.h, cfg.run.n_paths, cfg.run.seed)
    cov = res.covariance
    os.makedirs(cfg.output.directory, exist_ok=True)
    rows = [
        {"path": i, "det": float(cov.det[i]), "min_eig": float(cov.min_eig[i]), "xi": float(cov.xi[i]),
         "degenerate": bool(cov.degenerate[i]), "completed": bool(res.alive[i])}
        for i in range(res.n_paths)
    ]
    write_table(os.path.join(cfg.output.directory, "covariance.csv"), rows)
    write_json(os.path.join(cfg.output.directory, "manifest.json"), manifest(cfg))
    print(f"degenerate fraction {float(np.mean(cov.degenerate)):.4f}")
    return 0


def _cmd_density(args) -> int:
    cfg = _resolve(args)
    model = build_model(cfg)
    sub = build_subordinator(cfg, model)
    res = ensemble_run(model, sub, initial_state(cfg, model), cfg.run.t, cfg.run.h, cfg.run.n_paths, cfg.run.seed,
                       flows=False)
    est = kde_tensor_grid(res, padded_box_axes(res, max_points=args.grid_points))
    os.makedirs(cfg.output.directory, exist_ok=True)
    emit_density_grid(res, est, os.path.join(cfg.output.directory, "density.csv"))
    write_json(os.path.join(cfg.output.directory, "manifest.json"), manifest(cfg))
    print(f"mass over box {est.riemann_mass():.6f}")
    return 0


def _cmd_verify(args) -> int:
    cfg = _resolve(args)
    code = run_experiment(cfg)
    summary = os.path.join(cfg.output.directory, "summary.json")
    if os.path.exists(summary) and cfg.probes:
        with open(summary, encoding="utf-8") as fh:
            for p in json.load(fh)["probes"]:
                print(f"{p['verdict']:<13} {p['probe']}")
    return code


def _cmd_presets(args) -> int:
    if args.name is None:
        for name in sorted(PRESETS):
            print(name)
        return 0
    if args.name not in PRESETS:
        print(f"unknown preset {args.name!r}", file=sys.stderr)
        return 2
    print(emit_config(parse_config(PRESETS[args.name])), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypokinetic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    commands = (
        ("simulate", _cmd_simulate, "simulate paths and write terminal states"),
        ("covariance", _cmd_covariance, "per-path Malliavin covariance summaries"),
        ("density", _cmd_density, "kernel density of the terminal law on a grid"),
        ("verify", _cmd_verify, "run the configured probes and write verdicts"),
    )
    for name, fn, helptext in commands:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--preset", help="built-in config name (see `presets`)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--paths", type=int, help="number of paths")
        p.add_argument("--step", type=float, help="time step h")
        if name == "density":
            p.add_argument("--grid-points", type=int, default=200, help="max grid points per axis")
        p.set_defaults(func=fn)
    p = sub.add_parser("presets", help="list presets, or print one as YAML")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=_cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "run_experiment", "emit_density_grid", "PRESETS", "default_workers"]
