import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hypokinetic import rng as R
from hypokinetic.levy_noise import NoisePath, sample_noise_path
from hypokinetic.malliavin import (
    CovarianceAccumulator,
    NondecreasingPath,
    StepFunction,
    clock_paths,
    covariance_matrix,
    flow_rows_as_steps,
    haar_cells,
    parseval_covariance_oracle,
    time_change_integral,
)
from hypokinetic.model import builtin_kinetic_model, free_model
from hypokinetic.sde_engine import integrate_path, run_batch
from hypokinetic.subordinator import (
    StableFamily,
    SubordinatorSpec,
    TemperedStableFamily,
    ZeroFamily,
    sample_increments,
)

from oracles import gramian, linear_kinetic_matrix


def _traj(model, spec, t, n, seed, x0):
    inc = sample_increments(spec, np.linspace(0, t, n + 1), R.stream(seed))
    return integrate_path(model, x0, sample_noise_path(inc, R.stream(seed, 0, R.GAUSSIAN)))


def test_telescoping_identity_without_drift():
    spec = SubordinatorSpec((0.0, 0.3, 0.0), (StableFamily(0.5), TemperedStableFamily(0.4), StableFamily(0.8)))
    for seed in range(5):
        traj = _traj(free_model(3), spec, 1.0, 100, seed, np.zeros(3))
        cov = covariance_matrix(free_model(3), traj)
        S = traj.noise.dS.sum(axis=0)
        np.testing.assert_allclose(cov.sigma, np.diag(S), rtol=1e-12, atol=0)


def _deterministic_sigma(m, t, n):
    grid = np.linspace(0.0, t, n + 1)
    dS = np.zeros((n, m.dim))
    dS[:, list(m.velocity)] = np.diff(grid)[:, None]
    traj = integrate_path(m, np.zeros(m.dim), NoisePath(grid, dS, np.zeros((n, m.dim))))
    return covariance_matrix(m, traj)


def test_linear_kinetic_gramian_error_is_first_order():
    m = builtin_kinetic_model("quadratic", 1)
    G = gramian(linear_kinetic_matrix(1), m.diffusion, 0.5)
    errs = [np.linalg.norm(_deterministic_sigma(m, 0.5, n).sigma - G) / np.linalg.norm(G) for n in (250, 500, 1000, 2000)]
    order = np.polyfit(np.log([250, 500, 1000, 2000]), -np.log(errs), 1)[0]
    assert 0.9 <= order <= 1.1
    assert np.linalg.eigvalsh(_deterministic_sigma(m, 0.5, 500).sigma)[0] > 0


def test_accumulator_matches_single_path_covariance():
    m = builtin_kinetic_model("quartic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    inc = sample_increments(spec, np.linspace(0, 0.5, 51), R.stream(3), n_paths=4)
    noise = sample_noise_path(inc, R.stream(3, 0, R.GAUSSIAN))
    acc = CovarianceAccumulator(m.diffusion, noise.dS)
    run_batch(m, [0.5, 0.0], noise, observers=[acc])
    rec = acc.record()
    for p in range(4):
        single = covariance_matrix(m, integrate_path(m, [0.5, 0.0], noise.path(p)))
        np.testing.assert_allclose(rec.sigma[p], single.sigma, rtol=1e-12)
        assert rec.det[p] == pytest.approx(single.det, rel=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_covariance_is_symmetric_psd(seed):
    m = builtin_kinetic_model("quartic", 2)
    spec = SubordinatorSpec.for_kinetic(2, TemperedStableFamily(0.5, lam=1.0))
    cov = covariance_matrix(m, _traj(m, spec, 0.5, 100, seed, [0.5, 0.0, 0.0, 0.2]))
    np.testing.assert_allclose(cov.sigma, cov.sigma.T, atol=1e-14)
    assert cov.min_eig >= -1e-12 * np.abs(cov.sigma).max()
    assert cov.xi >= -1e-14
    assert not cov.degenerate


def test_degenerate_model_is_detected():
    m = builtin_kinetic_model("degenerate", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    cov = covariance_matrix(m, _traj(m, spec, 0.5, 100, 0, [0.5, 0.0]))
    assert cov.degenerate and cov.det == pytest.approx(0.0, abs=1e-300)
    assert math.isinf(cov.inv_det) or cov.inv_det >= 1e299


def _parseval_instances():
    for phase_dim, fam in ((1, TemperedStableFamily(0.5, lam=1.0)), (2, StableFamily(0.6))):
        m = builtin_kinetic_model("quartic", phase_dim)
        spec = SubordinatorSpec.for_kinetic(phase_dim, fam)
        for seed in range(5):
            x0 = np.r_[0.5, np.zeros(2 * phase_dim - 1)]
            yield m, _traj(m, spec, 0.5, 48, seed, x0)


def test_parseval_exact_part_recovers_reduced_matrix():
    for m, traj in _parseval_instances():
        cov = covariance_matrix(m, traj)
        ells = clock_paths(traj)
        for i in range(m.dim):
            for j in range(m.dim):
                f = flow_rows_as_steps(traj, m.diffusion, i)
                g = flow_rows_as_steps(traj, m.diffusion, j)
                _, rhs = parseval_covariance_oracle(f, g, ells, 1, 0.5)
                assert rhs == pytest.approx(cov.reduced[i, j], rel=1e-12, abs=1e-15)


def test_parseval_truncation_error_halves_per_level():
    levels = np.arange(12)
    for m, traj in _parseval_instances():
        ells = clock_paths(traj)
        f = flow_rows_as_steps(traj, m.diffusion, 0)
        errs = []
        for J in levels:
            lhs, rhs = parseval_covariance_oracle(f, f, ells, 2**J, 0.5)
            errs.append(abs(lhs - rhs) / rhs)
        slope = np.polyfit(levels, np.log2(errs), 1)[0]
        assert slope <= -0.8, (slope, errs)
        assert errs[-1] < 1e-4


def test_haar_cells_ordering():
    assert haar_cells(1) == [(-1, 0)]
    assert haar_cells(4) == [(-1, 0), (0, 0), (1, 0), (1, 1)]


def _h(y):
    return np.sin(y) + y * y


def _hdot(y):
    return np.cos(y) + 2 * y


def _random_instance(rs, pure_jump):
    n = rs.integers(2, 12)
    knots = np.concatenate([[0.0], np.sort(rs.uniform(0.05, 1.95, n - 1)), [2.0]])
    jumps = rs.exponential(0.5, n + 1) * (rs.random(n + 1) < 0.6)
    jumps[0] = 0.0
    if pure_jump:
        right = np.cumsum(jumps)
        left = np.concatenate([[0.0], right[:-1]])
    else:
        slopes = rs.exponential(1.0, n) * (rs.random(n) < 0.7)
        left = np.zeros(n + 1)
        right = np.zeros(n + 1)
        for j in range(1, n + 1):
            left[j] = right[j - 1] + slopes[j - 1] * (knots[j] - knots[j - 1])
            right[j] = left[j] + jumps[j]
    ell = NondecreasingPath(knots, left, right)
    m = rs.integers(1, 10)
    breaks = np.concatenate([[0.0], np.sort(rs.uniform(0.01, 1.99, m - 1)), [2.0]])
    f = StepFunction(breaks, rs.normal(size=m))
    return f, ell


def test_time_change_identity_on_random_instances():
    rs = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        f, ell = _random_instance(rs, pure_jump=k % 4 == 0)
        lhs, rhs = time_change_integral(f, _h, _hdot, ell)
        worst = max(worst, abs(lhs - rhs))
    assert worst <= 1e-10


def test_time_change_pure_jump_matches_sum():
    grid = np.array([0.0, 0.5, 1.0, 1.5])
    ell = NondecreasingPath.jumps_at_grid(grid, [0.0, 0.2, 0.7, 1.0])
    f = StepFunction(grid, [2.0, -1.0, 3.0])
    lhs, rhs = time_change_integral(f, _h, _hdot, ell)
    expected = 2.0 * (_h(0.2) - _h(0.0)) - 1.0 * (_h(0.7) - _h(0.2)) + 3.0 * (_h(1.0) - _h(0.7))
    assert lhs == pytest.approx(expected, abs=1e-14)
    assert rhs == pytest.approx(expected, abs=1e-12)


@given(st.lists(st.floats(0.0, 2.0), min_size=2, max_size=8), st.floats(0.0, 3.0))
def test_inverse_is_right_continuous_generalized_inverse(incs, y):
    grid = np.linspace(0, 1, len(incs) + 1)
    vals = np.concatenate([[0.0], np.cumsum(incs)])
    ell = NondecreasingPath.from_grid(grid, vals)
    s = float(ell.inverse(np.array([y]))[0])
    if math.isinf(s):
        assert y >= vals[-1]
    else:
        assert float(ell(np.array([s]))[0]) >= y - 1e-12
        assert float(ell(np.array([max(0.0, s - 1e-9)]))[0]) <= y + 1e-7


def test_invalid_paths_rejected():
    with pytest.raises(ValueError):
        NondecreasingPath([0.0, 1.0], [0.0, 1.0], [0.0, 0.5])
    with pytest.raises(ValueError):
        StepFunction([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        parseval_covariance_oracle(StepFunction([0, 1], [1.0]), StepFunction([0, 1], [1.0]), [], 0)


def test_zero_clock_gives_zero_noise():
    noise = NoisePath(np.linspace(0, 1, 3), np.zeros((2, 1)), np.zeros((2, 1)))
    traj = integrate_path(free_model(1), [0.0], noise)
    assert covariance_matrix(free_model(1), traj).degenerate
