"""Left-point Euler integration of the state together with its Jacobian flow.

``J`` follows ``dJ = grad b(X) J dt`` and ``K`` follows ``dK = -K grad b(X) dt``,
both from the identity, advanced with the same left-point rule as the state.
``K`` is integrated by its own equation, so ``K J - I`` is a free consistency
diagnostic of order ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .levy_noise import NoisePath
from .model import ModelSpec

DEFAULT_CEILING = 1e12


class BlowUpError(FloatingPointError):
    def __init__(self, step: int, value: float):
        super().__init__(f"path blew up at step {step} (H = {value:.3e}); retry with a finer grid")
        self.step = step
        self.value = value


@dataclass
class Trajectory:
    grid: np.ndarray
    states: np.ndarray  # (N+1, dim)
    jacobian: np.ndarray  # (N+1, dim, dim)
    inverse_jacobian: np.ndarray  # (N+1, dim, dim)
    lyapunov_sup: np.ndarray  # running sup of H(X) on the grid
    noise: NoisePath

    def inverse_defect(self) -> np.ndarray:
        """``|K_n J_n - I|`` at every grid point."""
        eye = np.eye(self.states.shape[-1])
        return np.linalg.norm(self.inverse_jacobian @ self.jacobian - eye, axis=(-2, -1))


@dataclass
class BatchOutcome:
    states: np.ndarray  # (P, dim) terminal
    jacobian: np.ndarray | None
    inverse_jacobian: np.ndarray | None
    lyapunov_sup: np.ndarray  # (P,)
    alive: np.ndarray  # (P,) bool
    abort_step: np.ndarray  # (P,) step index of abort, -1 if completed


Observer = Callable[[int, np.ndarray, np.ndarray, np.ndarray, np.ndarray], None]


def run_batch(
    model: ModelSpec,
    x0,
    noise: NoisePath,
    flows: bool = True,
    ceiling: float = DEFAULT_CEILING,
    observers: Iterable[Observer] = (),
) -> BatchOutcome:
    """Integrate every path of a batched noise (``dL`` of shape ``(P, N, dim)``).

    Observers are called at each grid point ``n = 0..N`` with
    ``(n, X_n, J_n, K_n, alive)``. Aborted paths are frozen at their last finite
    state and flagged; they are never dropped silently.
    """
    dL = noise.dL
    P, N, d = dL.shape
    if d != model.dim:
        raise ValueError(f"noise dimension {d} does not match model dimension {model.dim}")
    A = model.diffusion
    X = np.broadcast_to(np.asarray(x0, dtype=float), (P, d)).copy()
    eye = np.eye(d)
    J = np.broadcast_to(eye, (P, d, d)).copy() if flows else None
    K = np.broadcast_to(eye, (P, d, d)).copy() if flows else None
    alive = np.ones(P, dtype=bool)
    abort = np.full(P, -1)
    Hsup = np.asarray(model.lyapunov(X), dtype=float).copy()
    h = np.diff(noise.grid)
    noise_term = dL @ A.T
    observers = list(observers)
    for n in range(N):
        for obs in observers:
            obs(n, X, J, K, alive)
        with np.errstate(over="ignore", invalid="ignore"):
            Xn = X + model.drift(X) * h[n] + noise_term[:, n]
            if flows:
                B = model.drift_jacobian(X)
                Jn = J + (B @ J) * h[n]
                Kn = K - (K @ B) * h[n]
            Hn = np.asarray(model.lyapunov(Xn), dtype=float)
        bad = alive & ~(np.isfinite(Hn) & (Hn <= ceiling) & np.all(np.isfinite(Xn), axis=1))
        if bad.any():
            abort[bad] = n + 1
            alive &= ~bad
        X = np.where(alive[:, None], Xn, X)
        if flows:
            J = np.where(alive[:, None, None], Jn, J)
            K = np.where(alive[:, None, None], Kn, K)
        Hsup = np.where(alive, np.maximum(Hsup, np.where(alive, Hn, 0.0)), Hsup)
    for obs in observers:
        obs(N, X, J, K, alive)
    return BatchOutcome(X, J, K, Hsup, alive, abort)


def integrate_path(model: ModelSpec, x0, noise: NoisePath, ceiling: float = DEFAULT_CEILING) -> Trajectory:
    """One trajectory with the full state and flow history on the grid."""
    if noise.dL.ndim != 2:
        raise ValueError("integrate_path takes a single noise path; use run_batch for ensembles")
    N = noise.n_steps
    d = model.dim
    states = np.empty((N + 1, d))
    J = np.empty((N + 1, d, d))
    K = np.empty((N + 1, d, d))

    def record(n, X, Jn, Kn, alive):
        states[n], J[n], K[n] = X[0], Jn[0], Kn[0]

    batch = NoisePath(noise.grid, noise.dS[None], noise.dL[None])
    out = run_batch(model, x0, batch, flows=True, ceiling=ceiling, observers=[record])
    if not out.alive[0]:
        step = int(out.abort_step[0])
        raise BlowUpError(step, float(model.lyapunov(states[step - 1])))
    H = np.asarray(model.lyapunov(states), dtype=float)
    return Trajectory(noise.grid, states, J, K, np.maximum.accumulate(H), noise)


def sup_lyapunov(traj: Trajectory) -> float:
    return float(traj.lyapunov_sup[-1])
