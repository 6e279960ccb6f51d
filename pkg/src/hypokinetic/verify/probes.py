"""Monte Carlo probes of the moment, small-deviation, covariance and density statements.

Each probe returns :class:`ProbeResult` objects whose verdicts come from the
stated inequality applied to the estimate and its Monte Carlo uncertainty.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .. import rng as _rng
from ..model import ModelSpec
from ..subordinator import SubordinatorSpec, phi, sample_increments, theta_index
from .density import density_tail_probe, kde_density, kde_tensor_grid, loglog_fit, padded_box_axes, ray_points
from .ensemble import ensemble_run, uniform_grid
from .generator import TestFunction, generator_parts
from .probe_result import FAIL, INCONCLUSIVE, PASS, XFAIL, ProbeResult, combine, verdict_from

MOM_GROUPS = 10


# ------------------------------------------------------------ Fokker-Planck


def fokker_planck_residual(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0,
    t: float,
    h_time: float,
    test_functions: Sequence[TestFunction],
    n_paths: int,
    seed: int = 0,
    h: float = 1e-3,
    bias_constant: float = 1.0,
    inner: str = "closed",
    workers: int | None = None,
) -> list:
    """Weak-form residual of ``d/dt E f(X_t) = E[(L f)(X_t)]`` per test function.

    The central difference and the generator term are evaluated on the same
    paths, so the residual is the mean of a per-path statistic and its
    standard error is that statistic's sample standard deviation over
    ``sqrt(n)``.
    """
    if not 0 < h_time < t:
        raise ValueError("h_time must lie in (0, t)")
    res = ensemble_run(
        model, sub_spec, x0, t + h_time, h, n_paths, seed, flows=False, record_times=(t - h_time, t), workers=workers
    )
    ok = res.alive
    x_minus = res.snapshots[float(t - h_time)][ok]
    x_mid = res.snapshots[float(t)][ok]
    x_plus = res.states[ok]
    n = int(ok.sum())
    out = []
    for j, f in enumerate(test_functions):
        gv = generator_parts(model, sub_spec, f, x_mid, inner=inner)
        stat = (f.value(x_plus) - f.value(x_minus)) / (2.0 * h_time) - gv.value
        resid = float(stat.mean())
        se = float(stat.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
        tol = 3.0 * se + bias_constant * (h + h_time**2) * f.c2_norm + gv.error_bound
        details = {
            "test_function": repr(f),
            "t": t,
            "h_time": h_time,
            "h": h,
            "n_completed": n,
            "aborted": res.aborted,
            "time_derivative": float(((f.value(x_plus) - f.value(x_minus)) / (2.0 * h_time)).mean()),
            "generator_mean": float(gv.value.mean()),
            "quadrature_bound": gv.error_bound,
        }
        verdict = verdict_from(abs(resid) <= tol and res.aborted == 0)
        out.append(ProbeResult(f"fokker_planck[{j}]", resid, se, tol, verdict, [details], details))
    return out


# ------------------------------------------------------ exponential moments


def _log_mean_exp(v) -> float:
    v = np.asarray(v, dtype=float)
    return float(logsumexp(v) - math.log(v.size))


def exp_moment_probe(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0_list,
    t: float,
    n_paths: int,
    p: float,
    seed: int = 0,
    h: float = 1e-3,
    ratio_bound: float = 10.0,
    expect_fail: bool = False,
    growth_threshold: float = math.log(10.0),
    workers: int | None = None,
) -> ProbeResult:
    """Sample means of ``exp(p sup H^(1/2))`` relative to ``e^{H(x0)}`` across start points.

    All means are kept in log form. With ``expect_fail`` the probe looks for
    growth of the sample mean along nested prefixes of the ensemble; a rise
    larger than ``growth_threshold`` (in log units) is reported as the
    expected failure.
    """
    k1, k2 = model.constants.kappa1, model.constants.kappa2
    rows = []
    log_ratios = []
    growths = []
    aborted = 0
    for i, x0 in enumerate(x0_list):
        res = ensemble_run(model, sub_spec, x0, t, h, n_paths, seed + i, flows=False, workers=workers)
        aborted += res.aborted
        hsup = res.lyapunov_sup if expect_fail else res.lyapunov_sup[res.alive]
        h0 = float(model.lyapunov(np.asarray(x0, dtype=float)))
        expo = p * np.sqrt(hsup)
        log_m = _log_mean_exp(expo)
        clock = np.linalg.norm(res.clock if expect_fail else res.clock[res.alive], axis=1)
        coupled = 2.0 * hsup / (math.exp(k1 * t) * (k2 * clock + 1.0))
        log_m37 = _log_mean_exp(coupled)
        prefixes = np.unique(np.geomspace(min(100, expo.size), expo.size, 5).astype(int))
        traj = [_log_mean_exp(expo[:m]) for m in prefixes]
        growths.append(traj[-1] - traj[0])
        log_ratios.append(log_m - h0)
        rows.append(
            {
                "x0": list(map(float, x0)),
                "H_x0": h0,
                "log_mean_sqrt_form": log_m,
                "log_ratio": log_m - h0,
                "log_mean_coupled_form": log_m37,
                "log_ratio_coupled": log_m37 - h0,
                "prefix_sizes": prefixes.tolist(),
                "prefix_log_means": traj,
                "aborted": res.aborted,
            }
        )
    lr = np.array(log_ratios)
    finite = bool(np.all(np.isfinite(lr)))
    spread = float(lr.max() - lr.min()) if finite else math.inf
    details = {"p": p, "t": t, "aborted": aborted, "growth": growths, "expect_fail": expect_fail}
    if expect_fail:
        grew = bool(np.any(np.array(growths) > growth_threshold) or not finite)
        verdict = XFAIL if grew else INCONCLUSIVE
        return ProbeResult("exp_moment", float(max(growths)), math.nan, growth_threshold, verdict, rows, details)
    verdict = verdict_from(finite and aborted == 0 and spread <= math.log(ratio_bound))
    return ProbeResult("exp_moment", math.exp(spread) if finite else math.inf, math.nan, ratio_bound, verdict, rows, details)


# ----------------------------------------------------------- small deviation


def clock_ensemble(sub_spec: SubordinatorSpec, grid, n_paths: int, seed: int) -> np.ndarray:
    """Subordinator increments ``(n_paths, N, d)`` drawn with the same block scheme as the engine."""
    bs = _rng.BLOCK_SIZE
    out = []
    for b in range(_rng.n_blocks(n_paths, bs)):
        count = min(bs, n_paths - b * bs)
        sub = sample_increments(sub_spec, grid, _rng.stream(seed, b, _rng.SUBORDINATOR), n_paths=bs)
        out.append(sub.deltas[:count])
    return np.concatenate(out)


def small_deviation_probe(
    sub_spec: SubordinatorSpec,
    f,
    t: float,
    eps,
    delta: float,
    n_paths: int,
    seed: int = 0,
    n_steps: int = 64,
) -> list:
    """Empirical ``P{int f.dS <= eps, int |f| ds > delta}`` against ``exp(1 - phi(eps/R) delta/eps)``.

    ``f`` is a deterministic path (callable of time, or a constant vector);
    both integrals use left-point sums on the grid, exact for constant ``f``.
    """
    grid = uniform_grid(t, t / n_steps)
    fv = np.asarray(f(grid[:-1]) if callable(f) else np.broadcast_to(np.asarray(f, dtype=float), (n_steps, sub_spec.dim)))
    if np.any(fv < 0):
        raise ValueError("f must take values in the nonnegative orthant")
    R = float(np.max(np.linalg.norm(fv, axis=1)))
    if R <= 0:
        raise ValueError("f must not vanish identically")
    dS = clock_ensemble(sub_spec, grid, n_paths, seed)
    pairing = np.einsum("pnd,nd->p", dS, fv)
    mass = float(np.sum(np.linalg.norm(fv, axis=1) * np.diff(grid)))
    out = []
    for e in np.atleast_1d(eps):
        e = float(e)
        hit = (pairing <= e) & (mass > delta)
        prob = float(hit.mean())
        se = math.sqrt(max(prob * (1.0 - prob), 0.0) / n_paths)
        bound = math.exp(1.0 - phi(sub_spec, e / R) * delta / e)
        row = {"eps": e, "probability": prob, "se": se, "bound": bound, "R": R, "mass": mass}
        out.append(ProbeResult(f"small_deviation[eps={e:g}]", prob, se, bound, verdict_from(prob <= bound + 3 * se), [row], row))
    return out


# --------------------------------------------------------- covariance scaling


def median_of_means(x, groups: int = MOM_GROUPS):
    """Median of contiguous group means and a spread-based uncertainty."""
    x = np.asarray(x, dtype=float)
    g = max(1, min(groups, x.size))
    means = np.array([c.mean() for c in np.array_split(x, g)])
    med = float(np.median(means))
    mad = float(np.median(np.abs(means - med))) * 1.4826
    return med, mad / math.sqrt(g) if g > 1 else math.nan


def covariance_scaling_probe(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0,
    t_grid,
    n_paths: int,
    seed: int = 0,
    n_steps: int = 256,
    margin: float = 0.5,
    max_degenerate: float = 0.01,
    workers: int | None = None,
) -> ProbeResult:
    """Log-log slope of the median-of-means of ``1/det Sigma_t`` against ``t``."""
    theta = theta_index(sub_spec, active=model.active_noise)
    rows = []
    est, unc, worst_deg = [], [], 0.0
    for i, t in enumerate(sorted(t_grid)):
        res = ensemble_run(model, sub_spec, x0, t, t / n_steps, n_paths, seed + i, flows=True, workers=workers)
        cov = res.covariance
        ok = res.alive
        deg = float(np.mean(cov.degenerate[ok])) if ok.any() else 1.0
        worst_deg = max(worst_deg, deg)
        m, s = median_of_means(cov.inv_det[ok])
        est.append(m)
        unc.append(s)
        rows.append(
            {
                "t": t,
                "mom_inv_det": m,
                "mom_se": s,
                "degenerate_fraction": deg,
                "median_det": float(np.median(cov.det[ok])),
                "median_xi": float(np.median(cov.xi[ok])),
                "aborted": res.aborted,
            }
        )
    ts = np.array(sorted(t_grid), dtype=float)
    est = np.array(est)
    details = {"theta": theta, "dim": model.dim, "max_degenerate_fraction": worst_deg}
    if theta is None:
        details["reason"] = "theta index undefined for this clock"
        return ProbeResult("covariance_scaling", math.nan, math.nan, math.nan, INCONCLUSIVE, rows, details)
    threshold = -(2.0 * model.dim / theta) * (1.0 + margin)
    if worst_deg > max_degenerate:
        details["reason"] = "degenerate covariance on too many paths"
        return ProbeResult("covariance_scaling", math.nan, math.nan, threshold, FAIL, rows, details)
    finite = bool(np.all(np.isfinite(est)) and np.all(est > 0))
    if not finite:
        return ProbeResult("covariance_scaling", math.nan, math.nan, threshold, FAIL, rows, details)
    slope, r2, se = loglog_fit(ts, est)
    details["r2"] = r2
    return ProbeResult("covariance_scaling", slope, se, threshold, verdict_from(slope >= threshold), rows, details)


# -------------------------------------------------------------- moment probes


def _bounded(ratios, ses, factor: float) -> bool:
    """Ratios over a small-t grid stay within ``factor`` of the ratio at the largest t.

    The largest ``t`` (last entry) anchors the constant; every other entry,
    lowered by three standard errors, must not exceed ``factor`` times the
    anchor raised by three standard errors.
    """
    r, s = np.asarray(ratios, dtype=float), np.asarray(ses, dtype=float)
    if not np.all(np.isfinite(r)):
        return False
    anchor = r[-1] + 3.0 * s[-1]
    return bool(np.all(r - 3.0 * s <= factor * anchor + 1e-300))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def flow_moment_probe(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0,
    t_grid,
    n_paths: int,
    p: float = 2.0,
    eps_grid=(0.5, 1.0),
    seed: int = 0,
    n_steps: int = 64,
    bound_factor: float = 10.0,
    workers: int | None = None,
) -> ProbeResult:
    """``P{sup|X - x| > eps}/t`` and ``E sup|J - I|^p / t^p``, ``E sup|K - I|^p / t^p`` over ``t``."""
    ts = sorted(float(t) for t in t_grid)
    rows = []
    stats: dict = {}
    for i, t in enumerate(ts):
        res = ensemble_run(model, sub_spec, x0, t, t / n_steps, n_paths, seed + i, flows=True, covariance=False, workers=workers)
        ok = res.alive
        row = {"t": t, "aborted": res.aborted}
        for e in eps_grid:
            m, s = _mean_se((res.state_dev[ok] > e).astype(float))
            row[f"dev_prob_over_t[eps={e:g}]"] = m / t
            stats.setdefault(f"dev[{e:g}]", []).append((m / t, s / t))
        for key, arr in (("J", res.jac_dev), ("K", res.inv_dev)):
            m, s = _mean_se(arr[ok] ** p)
            row[f"sup_{key}_moment_over_t^p"] = m / t**p
            stats.setdefault(key, []).append((m / t**p, s / t**p))
        rows.append(row)
    verdicts = {k: _bounded([a for a, _ in v], [b for _, b in v], bound_factor) for k, v in stats.items()}
    worst = max(max(a for a, _ in v) for v in stats.values())
    details = {"bounded": verdicts, "p": p, "bound_factor": bound_factor}
    return ProbeResult("flow_moments", worst, math.nan, bound_factor, verdict_from(all(verdicts.values())), rows, details)


def subordinator_moment_probe(
    sub_spec: SubordinatorSpec,
    t_grid,
    p: float,
    n_paths: int,
    seed: int = 0,
    bound_factor: float = 10.0,
) -> ProbeResult:
    """``E sup_{s<=t} |S_s|^p / t`` over ``t``; the sup is the endpoint since ``S`` is nondecreasing."""
    ts = sorted(float(t) for t in t_grid)
    rows, r, s = [], [], []
    for i, t in enumerate(ts):
        dS = clock_ensemble(sub_spec, np.array([0.0, t]), n_paths, seed + i)
        m, se = _mean_se(np.linalg.norm(dS.sum(axis=1), axis=1) ** p)
        r.append(m / t)
        s.append(se / t)
        rows.append({"t": t, "moment_over_t": m / t, "se": se / t})
    ok = _bounded(r, s, bound_factor)
    return ProbeResult(f"clock_moment[p={p:g}]", max(r), math.nan, bound_factor, verdict_from(ok), rows, {"p": p})


# ------------------------------------------------------------------ density


def density_probe(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    x0,
    t: float,
    n_paths: int,
    seed: int = 0,
    h: float = 1e-3,
    beta3_min: float = 0.5,
    mass_range=(0.95, 1.02),
    workers: int | None = None,
):
    """KDE of ``X_t``: normalisation on the padded box and the far-field slope along rays.

    Returns ``(results, estimate, ensemble)``.
    """
    res = ensemble_run(model, sub_spec, x0, t, h, n_paths, seed, flows=False, workers=workers)
    box = kde_tensor_grid(res, padded_box_axes(res))
    mass = box.riemann_mass()
    finite = bool(np.all(np.isfinite(box.values)))
    norm = ProbeResult(
        "density_mass",
        mass,
        math.nan,
        mass_range[1],
        verdict_from(finite and mass_range[0] <= mass <= mass_range[1]),
        [{"mass": mass, "grid_points": int(box.values.size)}],
        {"range": list(mass_range), "bandwidth": box.bandwidth.tolist(), "floored": list(box.floored)},
    )
    centre = np.asarray(x0, dtype=float)
    alive = res.states[res.alive]
    r_max = float(np.quantile(np.linalg.norm(alive - centre, axis=1), 0.999))
    pts, radii = ray_points(centre, box.bandwidth, r_max=r_max)
    rays = kde_density(res, pts, box.bandwidth)
    tail = density_tail_probe(rays, centre, t, radii=radii, beta3_min=beta3_min, samples=alive)
    tail.details["finite_box"] = finite
    if not finite:
        tail.verdict = FAIL
    return [norm, tail], box, res


__all__ = [
    "fokker_planck_residual",
    "exp_moment_probe",
    "small_deviation_probe",
    "covariance_scaling_probe",
    "flow_moment_probe",
    "subordinator_moment_probe",
    "density_probe",
    "median_of_means",
    "clock_ensemble",
    "combine",
    "PASS",
    "FAIL",
    "INCONCLUSIVE",
    "XFAIL",
]
