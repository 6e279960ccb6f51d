"""Product-Gaussian kernel density estimates of the terminal law and its far-field decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .probe_result import ProbeResult, verdict_from

MIN_PATHS = 1000
BANDWIDTH_FLOOR = 1e-8
_IQR_TO_SIGMA = 1.349


@dataclass
class DensityEstimate:
    points: np.ndarray  # (G, d)
    values: np.ndarray  # (G,)
    bandwidth: np.ndarray  # (d,)
    n_paths: int
    axes: tuple | None = None  # per-coordinate grids when points form a tensor grid
    floored: tuple = ()  # coordinates whose spread hit the bandwidth floor
    notes: dict = field(default_factory=dict)

    def riemann_mass(self) -> float:
        """Midpoint-rule mass over the tensor grid the estimate was evaluated on."""
        if self.axes is None:
            raise ValueError("Riemann mass needs a tensor grid")
        cell = np.prod([ax[1] - ax[0] for ax in self.axes])
        return float(self.values.sum() * cell)


def auto_bandwidth(samples: np.ndarray):
    """Per-coordinate IQR rule of thumb ``(IQR / 1.349) n^(-1/(d+4))``."""
    n, d = samples.shape
    q75, q25 = np.percentile(samples, [75, 25], axis=0)
    sigma = (q75 - q25) / _IQR_TO_SIGMA
    bw = sigma * n ** (-1.0 / (d + 4))
    floor = BANDWIDTH_FLOOR * np.maximum(1.0, np.abs(np.median(samples, axis=0)))
    floored = tuple(int(j) for j in np.nonzero(bw < floor)[0])
    return np.maximum(bw, floor), floored


def _samples(result) -> np.ndarray:
    x = result.states[result.alive] if hasattr(result, "states") else np.asarray(result, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be an (n, d) array")
    return x


def _kernel_1d(grid: np.ndarray, data: np.ndarray, h: float) -> np.ndarray:
    r = (grid[:, None] - data[None, :]) / h
    return np.exp(-0.5 * r * r) / (h * math.sqrt(2.0 * math.pi))


def _check(x):
    if x.shape[0] < MIN_PATHS:
        raise ValueError(f"kde_density needs at least {MIN_PATHS} completed paths, got {x.shape[0]}")


def kde_density(result, grid, bandwidth="auto", chunk_elems: int = 4_000_000) -> DensityEstimate:
    """Kernel estimate at arbitrary ``grid`` points (``(G, d)``)."""
    x = _samples(result)
    _check(x)
    n, d = x.shape
    floored = ()
    if isinstance(bandwidth, str):
        if bandwidth.lower() != "auto":
            raise ValueError(f"bandwidth must be a vector or 'auto', got {bandwidth!r}")
        bw, floored = auto_bandwidth(x)
    else:
        bw = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy()
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    out = np.zeros(pts.shape[0])
    norm = 1.0 / (n * np.prod(bw) * (2.0 * math.pi) ** (d / 2))
    chunk = max(1, chunk_elems // n)
    for s in range(0, pts.shape[0], chunk):
        r = (pts[s : s + chunk, None, :] - x[None, :, :]) / bw
        out[s : s + chunk] = np.exp(-0.5 * np.sum(r * r, axis=-1)).sum(axis=1) * norm
    return DensityEstimate(pts, out, bw, n, floored=floored)


def kde_tensor_grid(result, axes, bandwidth="auto") -> DensityEstimate:
    """Kernel estimate on the tensor grid ``axes[0] x ... x axes[d-1]`` (lexicographic order).

    The product kernel factorises, so the grid sum is a chain of matrix products.
    """
    x = _samples(result)
    _check(x)
    n, d = x.shape
    if len(axes) != d:
        raise ValueError("one axis per coordinate is required")
    if isinstance(bandwidth, str):
        bw, floored = auto_bandwidth(x)
    else:
        bw, floored = np.broadcast_to(np.asarray(bandwidth, dtype=float), (d,)).copy(), ()
    axes = tuple(np.asarray(ax, dtype=float) for ax in axes)
    if d == 1:
        vals = _kernel_1d(axes[0], x[:, 0], bw[0]).sum(axis=1) / n
    elif d == 2:
        k0 = _kernel_1d(axes[0], x[:, 0], bw[0])
        k1 = _kernel_1d(axes[1], x[:, 1], bw[1])
        vals = (k0 @ k1.T).ravel() / n
    else:
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        est = kde_density(x, mesh, bw)
        return DensityEstimate(mesh, est.values, bw, n, axes=axes, floored=floored)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return DensityEstimate(mesh, vals, bw, n, axes=axes, floored=floored)


def padded_box_axes(result, bandwidth=None, pad: float = 6.0, cells_per_bandwidth: float = 2.0,
                    quantile: float = 5e-4, max_points: int = 400):
    """Tensor axes spanning the central sample range plus ``pad`` bandwidths on each side."""
    x = _samples(result)
    bw = auto_bandwidth(x)[0] if bandwidth is None else np.asarray(bandwidth, dtype=float)
    lo = np.quantile(x, quantile, axis=0) - pad * bw
    hi = np.quantile(x, 1.0 - quantile, axis=0) + pad * bw
    axes = []
    for j in range(x.shape[1]):
        m = int(np.clip(np.ceil((hi[j] - lo[j]) / bw[j] * cells_per_bandwidth), 8, max_points))
        step = (hi[j] - lo[j]) / m
        axes.append(lo[j] + step * (np.arange(m) + 0.5))
    return axes


def ray_points(x0, bandwidth, r_max=None, n_dirs: int = 16, n_radii: int = 64, reach: float = 40.0):
    """Points on rays from ``x0``, log-spaced in radius from half a bandwidth to ``r_max``.

    ``r_max`` defaults to ``reach`` bandwidths. Returns ``(points, radii)`` with
    ``points`` of shape ``(n_dirs * n_radii, d)``, direction-major.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    scale = float(np.linalg.norm(np.asarray(bandwidth, dtype=float)))
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rs = np.random.default_rng(12345)  # fixed mesh, not a Monte Carlo draw
        dirs = rs.standard_normal((n_dirs, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r_max = reach * scale if r_max is None else max(float(r_max), 2.0 * scale)
    radii = np.geomspace(0.5 * scale, r_max, n_radii)
    pts = x0[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    return pts.reshape(-1, d), np.tile(radii, dirs.shape[0])


def density_tail_probe(
    estimate: DensityEstimate,
    x0,
    t: float,
    radii=None,
    beta3_min: float = 0.5,
    far_quantile: float = 0.5,
    min_points: int = 8,
    samples=None,
    floor_samples: float = 5.0,
) -> ProbeResult:
    """Fitted far-field slope of ``log rho`` against ``log |y - x0|``.

    Estimates sharing a radius (points on a family of rays) are averaged over
    directions first. Only radii beyond the far-field radius whose averaged
    estimate exceeds the kernel floor (``floor_samples`` samples' worth of
    kernel mass at the centre) enter the fit; fewer than ``min_points`` of them make the probe
    inconclusive.
    """
    x0 = np.asarray(x0, dtype=float)
    vals = estimate.values
    finite = bool(np.all(np.isfinite(vals)))
    if radii is None:
        radii = np.linalg.norm(estimate.points - x0, axis=1)
    radii = np.asarray(radii, dtype=float)
    r_u, inv = np.unique(radii, return_inverse=True)
    mean = np.bincount(inv, weights=np.where(np.isfinite(vals), vals, 0.0)) / np.bincount(inv)
    d = estimate.points.shape[1]
    floor = floor_samples / (estimate.n_paths * np.prod(estimate.bandwidth) * (2.0 * math.pi) ** (d / 2))
    if samples is not None:
        r_far = float(np.quantile(np.linalg.norm(np.asarray(samples) - x0, axis=1), far_quantile))
    else:
        r_far = float(np.quantile(r_u, far_quantile))
    use = (r_u >= r_far) & (mean > floor)
    table = [{"radius": float(r), "density": float(v), "used": bool(u)} for r, v, u in zip(r_u, mean, use)]
    details = {"t": t, "far_radius": r_far, "density_floor": float(floor), "n_fit": int(use.sum()), "finite": finite}
    if not finite:
        return ProbeResult("density_tail", math.nan, math.nan, -beta3_min, "FAIL", table, details)
    if use.sum() < min_points:
        return ProbeResult("density_tail", math.nan, math.nan, -beta3_min, "INCONCLUSIVE", table, details)
    slope, r2, se = loglog_fit(r_u[use], mean[use])
    details["r2"] = r2
    return ProbeResult(
        "density_tail", slope, se, -beta3_min, verdict_from(slope <= -beta3_min), table, details
    )


def loglog_fit(x, y):
    """OLS slope of ``log y`` on ``log x`` with its R^2 and standard error."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    n = lx.size
    se = math.sqrt(float(resid @ resid) / (n - 2) / float(np.sum((lx - lx.mean()) ** 2))) if n > 2 else math.nan
    return float(coef[0]), r2, se


def peak_scaling(estimates: dict) -> tuple:
    """Empirical ``beta_1``: minus the slope of ``log sup rho`` against ``log t``."""
    ts = np.array(sorted(estimates))
    peaks = np.array([float(np.max(estimates[t].values)) for t in ts])
    slope, r2, _ = loglog_fit(ts, peaks)
    return -slope, r2, peaks
