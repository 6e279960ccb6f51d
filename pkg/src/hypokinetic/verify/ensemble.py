"""Deterministic ensembles of (noise, trajectory, covariance) triples.

Paths are grouped in blocks of ``rng.BLOCK_SIZE``. Block ``b`` always draws a
full block from its own streams and is then truncated, so the first ``n``
paths of an ensemble do not depend on ``n_paths`` or on the worker count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..levy_noise import NoisePath, sample_noise_path
from ..malliavin import CovarianceAccumulator, CovarianceRecord, _record
from ..model import ModelSpec
from ..sde_engine import DEFAULT_CEILING, run_batch
from ..subordinator import SubordinatorSpec, sample_increments

WORKERS_ENV = "HYPOKINETIC_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def uniform_grid(t: float, h: float) -> np.ndarray:
    if t <= 0 or h <= 0:
        raise ValueError("t and h must be positive")
    n = max(1, int(round(t / h)))
    if abs(n * h - t) > 1e-9 * t:
        n = int(np.ceil(t / h))
    return np.linspace(0.0, t, n + 1)


@dataclass
class EnsembleResult:
    n_paths: int
    states: np.ndarray  # (P, d) terminal
    lyapunov_sup: np.ndarray  # (P,)
    clock: np.ndarray  # (P, d) terminal S_t
    alive: np.ndarray  # (P,) completed paths
    abort_step: np.ndarray
    seed: int
    grid: np.ndarray
    snapshots: dict = field(default_factory=dict)  # time -> (P, d)
    covariance: CovarianceRecord | None = None
    state_dev: np.ndarray | None = None  # sup_s |X_s - x0|
    jac_dev: np.ndarray | None = None  # sup_s |J_s - I|
    inv_dev: np.ndarray | None = None  # sup_s |K_s - I|
    block_size: int = _rng.BLOCK_SIZE
    scheme: str = _rng.SCHEME

    @property
    def aborted(self) -> int:
        return int(self.n_paths - self.alive.sum())

    @property
    def completed(self) -> int:
        return int(self.alive.sum())

    @property
    def block_seeds(self) -> list:
        """Spawn keys of the streams consumed, as ``(block, purpose)`` pairs."""
        nb = _rng.n_blocks(self.n_paths, self.block_size)
        return [(b, p) for b in range(nb) for p in (_rng.SUBORDINATOR, _rng.GAUSSIAN)]


class _SupTracker:
    def __init__(self, x0, P, d, flows):
        self.x0 = x0
        self.flows = flows
        self.sx = np.zeros(P)
        self.sj = np.zeros(P) if flows else None
        self.sk = np.zeros(P) if flows else None
        self.eye = np.eye(d)

    def __call__(self, n, X, J, K, alive):
        np.maximum(self.sx, np.linalg.norm(X - self.x0, axis=-1), out=self.sx)
        if self.flows:
            np.maximum(self.sj, np.linalg.norm(J - self.eye, axis=(-2, -1)), out=self.sj)
            np.maximum(self.sk, np.linalg.norm(K - self.eye, axis=(-2, -1)), out=self.sk)


class _Snapshots:
    def __init__(self, index_of: dict):
        self.index_of = index_of
        self.taken = {}

    def __call__(self, n, X, J, K, alive):
        for t, idx in self.index_of.items():
            if idx == n:
                self.taken[t] = X.copy()


def block_noise(sub_spec: SubordinatorSpec, grid, seed: int, block: int, count: int) -> NoisePath:
    """Noise for the first ``count`` paths of ``block`` (a full block is always drawn)."""
    bs = _rng.BLOCK_SIZE
    sub = sample_increments(sub_spec, grid, _rng.stream(seed, block, _rng.SUBORDINATOR), n_paths=bs)
    noise = sample_noise_path(sub, _rng.stream(seed, block, _rng.GAUSSIAN))
    return NoisePath(noise.grid, noise.dS[:count], noise.dL[:count])


def _run_block(model, sub_spec, x0, grid, seed, block, count, flows, covariance, index_of, ceiling):
    noise = block_noise(sub_spec, grid, seed, block, count)
    tracker = _SupTracker(x0, count, model.dim, flows)
    snaps = _Snapshots(index_of)
    observers = [tracker, snaps]
    acc = None
    if covariance:
        acc = CovarianceAccumulator(model.diffusion, noise.dS)
        observers.append(acc)
    out = run_batch(model, x0, noise, flows=flows, ceiling=ceiling, observers=observers)
    return {
        "states": out.states,
        "hsup": out.lyapunov_sup,
        "clock": noise.dS.sum(axis=1),
        "alive": out.alive,
        "abort": out.abort_step,
        "snaps": snaps.taken,
        "sx": tracker.sx,
        "sj": tracker.sj,
        "sk": tracker.sk,
        "sigma": None if acc is None else acc.J @ acc.reduced @ np.swapaxes(acc.J, -1, -2),
        "reduced": None if acc is None else acc.reduced,
    }


def ensemble_run(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0,
    t: float,
    h: float,
    n_paths: int,
    seed: int,
    flows: bool = True,
    covariance: bool | None = None,
    record_times=(),
    workers: int | None = None,
    ceiling: float = DEFAULT_CEILING,
) -> EnsembleResult:
    """Simulate ``n_paths`` independent paths on ``[0, t]`` with step ``h``.

    ``record_times`` must lie on the grid; states there are kept as snapshots.
    Covariance records need the flows and default to being computed with them.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if sub_spec.dim != model.dim:
        raise ValueError(f"subordinator dimension {sub_spec.dim} does not match model dimension {model.dim}")
    covariance = flows if covariance is None else covariance
    if covariance and not flows:
        raise ValueError("covariance records require the Jacobian flows")
    grid = uniform_grid(t, h)
    step = grid[1]
    index_of = {}
    for rt in record_times:
        idx = int(round(rt / step))
        if abs(idx * step - rt) > 1e-9 * max(t, 1.0) or not 0 <= idx < grid.size:
            raise ValueError(f"record time {rt} is not a grid point of step {step}")
        index_of[float(rt)] = idx
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 must have shape ({model.dim},)")
    bs = _rng.BLOCK_SIZE
    nb = _rng.n_blocks(n_paths, bs)
    counts = [min(bs, n_paths - b * bs) for b in range(nb)]
    args = [(model, sub_spec, x0, grid, seed, b, counts[b], flows, covariance, index_of, ceiling) for b in range(nb)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or nb == 1:
        parts = [_run_block(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _run_block(*a), args))

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    cov = None
    if covariance:
        cov = _record(cat("sigma"), cat("reduced"))
    return EnsembleResult(
        n_paths=n_paths,
        states=cat("states"),
        lyapunov_sup=cat("hsup"),
        clock=cat("clock"),
        alive=cat("alive"),
        abort_step=cat("abort"),
        seed=seed,
        grid=grid,
        snapshots={k: np.concatenate([p["snaps"][k] for p in parts]) for k in index_of},
        covariance=cov,
        state_dev=cat("sx"),
        jac_dev=cat("sj") if flows else None,
        inv_dev=cat("sk") if flows else None,
    )
