"""Pathwise Malliavin covariance and the time-change / Parseval oracles behind it.

Given the flows on a grid, the covariance of ``X_t`` is

    Sigma_t = J_t C_t J_t^T,   C_t = sum_k int_0^t (K_s a_k)(K_s a_k)^T dS^k_s,

with the ``dS`` integrals taken as left-point Stieltjes sums. The oracles
recompute ``C_t`` from scratch through a truncated Haar basis of the
Cameron-Martin space, which never touches the left-point sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ModelSpec
from .sde_engine import Trajectory

DET_FLOOR = 1e-300


@dataclass
class CovarianceRecord:
    sigma: np.ndarray
    reduced: np.ndarray
    det: float | np.ndarray
    min_eig: float | np.ndarray  # of sigma
    xi: float | np.ndarray  # smallest eigenvalue of the reduced matrix
    degenerate: bool | np.ndarray

    @property
    def inv_det(self):
        """``1/det`` with the determinant clamped at ``DET_FLOOR``."""
        return 1.0 / np.maximum(self.det, DET_FLOOR)


def _record(sigma: np.ndarray, reduced: np.ndarray) -> CovarianceRecord:
    try:
        ev = np.linalg.eigvalsh(0.5 * (sigma + np.swapaxes(sigma, -1, -2)))
        ev_r = np.linalg.eigvalsh(0.5 * (reduced + np.swapaxes(reduced, -1, -2)))
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"symmetric eigensolver failed: {exc}") from exc
    det = np.prod(np.clip(ev, 0.0, None), axis=-1)
    degenerate = det < DET_FLOOR
    scalar = sigma.ndim == 2
    pick = (lambda a: a.item()) if scalar else (lambda a: a)
    return CovarianceRecord(sigma, reduced, pick(det), pick(ev[..., 0]), pick(ev_r[..., 0]), pick(degenerate))


def reduced_increment(K: np.ndarray, A: np.ndarray, dS: np.ndarray) -> np.ndarray:
    """``sum_k (K a_k)(K a_k)^T dS^k`` for batched ``K`` (``(..., d, d)``) and ``dS`` (``(..., d)``)."""
    KA = K @ A
    return (KA * dS[..., None, :]) @ np.swapaxes(KA, -1, -2)


def covariance_matrix(model: ModelSpec, traj: Trajectory) -> CovarianceRecord:
    K = traj.inverse_jacobian[:-1]
    dS = traj.noise.dS
    if dS.shape[0] != K.shape[0]:
        raise ValueError("trajectory and noise lengths differ")
    reduced = reduced_increment(K, model.diffusion, dS).sum(axis=0)
    J = traj.jacobian[-1]
    sigma = J @ reduced @ J.T
    return _record(sigma, reduced)


class CovarianceAccumulator:
    """Observer for :func:`sde_engine.run_batch` accumulating ``C_t`` along a batch."""

    def __init__(self, A: np.ndarray, dS: np.ndarray):
        self.A = A
        self.dS = dS  # (P, N, d)
        P, _, d = dS.shape
        self.reduced = np.zeros((P, d, d))
        self.J = None

    def __call__(self, n, X, J, K, alive):
        if n < self.dS.shape[1]:
            self.reduced += reduced_increment(K, self.A, self.dS[:, n])
        else:
            self.J = J.copy()

    def record(self) -> CovarianceRecord:
        sigma = self.J @ self.reduced @ np.swapaxes(self.J, -1, -2)
        return _record(sigma, self.reduced)


# ------------------------------------------------------------- time change


@dataclass
class StepFunction:
    """``f = values[j]`` on ``(breaks[j], breaks[j+1]]``; ``f(0) = values[0]``."""

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.breaks = np.asarray(self.breaks, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.breaks.size != self.values.shape[0] + 1 or np.any(np.diff(self.breaks) <= 0):
            raise ValueError("step function needs increasing breaks and one value per interval")

    def __call__(self, s):
        j = np.searchsorted(self.breaks, s, side="left") - 1
        return self.values[np.clip(j, 0, self.values.shape[0] - 1)]

    @property
    def horizon(self) -> float:
        return float(self.breaks[-1])


@dataclass
class NondecreasingPath:
    """Cadlag nondecreasing ``ell`` with ``ell(0) = 0``.

    ``left[j]`` / ``right[j]`` are the left limit and value at ``knots[j]``;
    between knots the path is linear from ``right[j]`` to ``left[j+1]``.
    """

    knots: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if self.knots[0] != 0 or self.right[0] != 0 or self.left[0] != 0:
            raise ValueError("ell must start at 0 without a jump")
        if np.any(np.diff(self.knots) <= 0) or np.any(self.right < self.left) or np.any(self.left[1:] < self.right[:-1]):
            raise ValueError("ell must be nondecreasing with increasing knots")

    @classmethod
    def from_grid(cls, grid, values) -> "NondecreasingPath":
        """Linear interpolation of grid values (no jumps)."""
        values = np.asarray(values, dtype=float)
        return cls(grid, values, values)

    @classmethod
    def jumps_at_grid(cls, grid, values) -> "NondecreasingPath":
        """Constant on each ``[t_n, t_{n+1})`` and jumping at grid points."""
        values = np.asarray(values, dtype=float)
        left = np.concatenate([[0.0], values[:-1]])
        return cls(grid, left, values)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        j = np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, self.knots.size - 1)
        nxt = np.minimum(j + 1, self.knots.size - 1)
        span = self.knots[nxt] - self.knots[j]
        frac = np.where(span > 0, (s - self.knots[j]) / np.where(span > 0, span, 1.0), 0.0)
        return self.right[j] + (self.left[nxt] - self.right[j]) * frac

    def inverse(self, y):
        """``inf{s >= 0 : ell_s > y}`` (``inf`` beyond the last knot)."""
        y = np.asarray(y, dtype=float)
        j = np.searchsorted(self.right, y, side="right")
        out = np.full(y.shape, np.inf)
        ok = j < self.knots.size
        jj = np.where(ok, j, 1)
        on_slope = ok & (self.left[jj] > y)
        r0 = self.knots[jj - 1]
        v0 = self.right[jj - 1]
        rise = self.left[jj] - v0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            s_lin = r0 + (y - v0) / rise * (self.knots[jj] - r0)
        out = np.where(on_slope, s_lin, out)
        out = np.where(ok & ~on_slope, self.knots[jj], out)
        return out


def _merged_breaks(f: StepFunction, ell: NondecreasingPath, t: float) -> np.ndarray:
    pts = np.union1d(f.breaks, ell.knots)
    return np.union1d(pts[pts < t], [t])


def stieltjes_lhs(f: StepFunction, h: Callable, ell: NondecreasingPath, t: float) -> float:
    """``int_0^t f_s d h(ell_s)`` as an exact sum over merged breakpoints."""
    p = _merged_breaks(f, ell, t)
    hv = h(ell(p))
    mid = 0.5 * (p[:-1] + p[1:])
    return float(np.sum(f(mid) * np.diff(hv)))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def inverse_rhs(f: StepFunction, hdot: Callable, ell: NondecreasingPath, t: float) -> float:
    """``int_0^{ell_t} f(ell^{-1}_y) hdot(y) dy`` by Gauss-Legendre on each constancy piece."""
    p = _merged_breaks(f, ell, t)
    ys = np.union1d(ell(p), np.concatenate([ell.left[ell.knots <= t], ell.right[ell.knots <= t]]))
    ys = ys[ys <= ell(t)]
    total = 0.0
    for a, b in zip(ys[:-1], ys[1:]):
        if b <= a:
            continue
        fval = f(ell.inverse(0.5 * (a + b)))
        nodes = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
        total += float(fval) * 0.5 * (b - a) * float(np.dot(_GL_W, hdot(nodes)))
    return total


def time_change_integral(f: StepFunction, h: Callable, hdot: Callable, ell: NondecreasingPath, t: float | None = None):
    """Both sides of the change of variables ``int f dh(ell) = int_0^{ell_t} f(ell^{-1}) hdot``."""
    t = f.horizon if t is None else t
    return stieltjes_lhs(f, h, ell, t), inverse_rhs(f, hdot, ell, t)


# --------------------------------------------------------------- Parseval


def haar_cells(n: int):
    """First ``n`` Haar functions on [0, 1] as ``(level, shift)``; ``(-1, 0)`` is the constant."""
    out = [(-1, 0)]
    j = 0
    while len(out) < n:
        out.extend((j, m) for m in range(2**j))
        j += 1
    return out[:n]


def _primitive(f_vals: np.ndarray, lo: np.ndarray, hi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``F(y) = int_0^y fhat`` where ``fhat = f_i`` on ``[lo_i, hi_i)`` (the time-changed integrand)."""
    seg = np.clip(y[:, None], lo[None, :], hi[None, :]) - lo[None, :]
    return seg @ f_vals


def parseval_covariance_oracle(
    f: StepFunction, g: StepFunction, ell: Sequence[NondecreasingPath], basis_size: int, t: float | None = None
):
    """Truncated-basis sum versus the direct ``sum_k int f^k g^k dell^k``.

    ``f`` and ``g`` carry vector values (one column per component of ``ell``).
    Each coefficient ``int_0^t f^k d h^n(ell^k)`` is evaluated as the
    Stieltjes sum with ``h^n`` the primitive of a Haar function.
    """
    if basis_size < 1:
        raise ValueError("basis_size must be >= 1")
    t = f.horizon if t is None else t
    cells = haar_cells(basis_size)
    lhs = 0.0
    rhs = 0.0
    for k, ell_k in enumerate(ell):
        p = np.union1d(_merged_breaks(f, ell_k, t), g.breaks[g.breaks <= t])
        mid = 0.5 * (p[:-1] + p[1:])
        lo, hi = ell_k(p[:-1]), ell_k(p[1:])
        fk = np.atleast_2d(f(mid).T)[k] if f.values.ndim > 1 else f(mid)
        gk = np.atleast_2d(g(mid).T)[k] if g.values.ndim > 1 else g(mid)
        rhs += float(np.sum(fk * gk * (hi - lo)))
        T = float(ell_k(t))
        if T <= 0:
            continue
        a = np.array([0.0 if j < 0 else m / 2**j for j, m in cells]) * T
        w = np.array([1.0 if j < 0 else 2.0**-j for j, m in cells]) * T
        amp = np.array([1.0 if j < 0 else 2.0 ** (j / 2) for j, m in cells]) / math.sqrt(T)
        ys = np.concatenate([a, a + w / 2, a + w])
        Ff = _primitive(fk, lo, hi, ys).reshape(3, -1)
        Fg = _primitive(gk, lo, hi, ys).reshape(3, -1)
        const = np.array([j < 0 for j, m in cells])
        cf = np.where(const, Ff[2] - Ff[0], 2 * Ff[1] - Ff[0] - Ff[2]) * amp
        cg = np.where(const, Fg[2] - Fg[0], 2 * Fg[1] - Fg[0] - Fg[2]) * amp
        lhs += float(np.dot(cf, cg))
    return lhs, rhs


def flow_rows_as_steps(traj: Trajectory, A: np.ndarray, row: int) -> StepFunction:
    """``s -> (K_s A)[row]`` as a left-point step function on the trajectory grid."""
    KA = traj.inverse_jacobian[:-1] @ A
    return StepFunction(traj.grid, KA[:, row, :])


def clock_paths(traj: Trajectory) -> list:
    S = np.concatenate([np.zeros((1, traj.noise.dim)), np.cumsum(traj.noise.dS, axis=0)])
    return [NondecreasingPath.from_grid(traj.grid, S[:, k]) for k in range(S.shape[1])]
