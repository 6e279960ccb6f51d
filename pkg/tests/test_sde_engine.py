import numpy as np
import pytest
from scipy import linalg

from hypokinetic import rng as R
from hypokinetic.levy_noise import NoisePath, sample_noise_path
from hypokinetic.model import builtin_kinetic_model, polynomial_model
from hypokinetic.sde_engine import BlowUpError, integrate_path, run_batch, sup_lyapunov
from hypokinetic.subordinator import SubordinatorSpec, TemperedStableFamily, sample_increments

from oracles import linear_kinetic_matrix


def _quiet_noise(dim, t, n):
    grid = np.linspace(0.0, t, n + 1)
    return NoisePath(grid, np.zeros((n, dim)), np.zeros((n, dim)))


def _linear_model(M):
    d = M.shape[0]
    return polynomial_model(
        "linear",
        drift=lambda z: np.asarray(z) @ M.T,
        jac=lambda z: np.broadcast_to(M, np.shape(z) + (d,)).copy(),
        hess=lambda z: np.zeros(np.shape(z) + (d, d)),
        diffusion=np.zeros((d, d)),
    )


def _noise(spec, t, n, seed, paths=None):
    inc = sample_increments(spec, np.linspace(0, t, n + 1), R.stream(seed), n_paths=paths)
    return sample_noise_path(inc, R.stream(seed, 0, R.GAUSSIAN))


def test_linear_ode_first_order():
    M = linear_kinetic_matrix(1)
    m = _linear_model(M)
    x0 = np.array([1.0, -0.5])
    exact = linalg.expm(M) @ x0
    errs = [np.linalg.norm(integrate_path(m, x0, _quiet_noise(2, 1.0, n)).states[-1] - exact) for n in (100, 200, 400, 800)]
    order = np.polyfit(np.log([1 / 100, 1 / 200, 1 / 400, 1 / 800]), np.log(errs), 1)[0]
    assert order >= 0.95


def test_jacobian_of_linear_flow_is_matrix_exponential():
    M = linear_kinetic_matrix(2)
    traj = integrate_path(_linear_model(M), np.zeros(4), _quiet_noise(4, 1.0, 4000))
    np.testing.assert_allclose(traj.jacobian[-1], linalg.expm(M), atol=1e-3)
    np.testing.assert_allclose(traj.inverse_jacobian[-1], linalg.expm(-M), atol=1e-3)


def test_inverse_flow_defect_is_first_order():
    m = builtin_kinetic_model("quartic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    fine = _noise(spec, 1.0, 1000, seed=4)
    defects = [integrate_path(m, [0.5, 0.0], fine.coarsen(f)).inverse_defect().max() for f in (4, 2, 1)]
    orders = np.log2(np.array(defects[:-1]) / np.array(defects[1:]))
    assert np.all((orders > 0.9) & (orders < 1.3))


def test_batch_matches_single_paths():
    m = builtin_kinetic_model("quartic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    batch = _noise(spec, 0.5, 50, seed=2, paths=5)
    out = run_batch(m, [0.5, 0.0], batch)
    for p in range(5):
        traj = integrate_path(m, [0.5, 0.0], batch.path(p))
        np.testing.assert_array_equal(out.states[p], traj.states[-1])
        np.testing.assert_array_equal(out.jacobian[p], traj.jacobian[-1])
        assert out.lyapunov_sup[p] == pytest.approx(sup_lyapunov(traj), rel=1e-15)


def test_reruns_are_identical():
    m = builtin_kinetic_model("quartic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    a = run_batch(m, [0.5, 0.0], _noise(spec, 0.5, 50, seed=9, paths=8))
    b = run_batch(m, [0.5, 0.0], _noise(spec, 0.5, 50, seed=9, paths=8))
    assert a.states.tobytes() == b.states.tobytes()


def test_flow_cocycle_for_linear_drift():
    # J over [0, t] equals the product of the flows over the two halves
    M = linear_kinetic_matrix(1)
    m = _linear_model(M)
    full = integrate_path(m, np.zeros(2), _quiet_noise(2, 1.0, 200)).jacobian[-1]
    half = integrate_path(m, np.zeros(2), _quiet_noise(2, 0.5, 100)).jacobian[-1]
    np.testing.assert_allclose(full, half @ half, rtol=1e-12)


def test_blow_up_is_reported():
    m = polynomial_model(
        "explosive",
        drift=lambda z: np.asarray(z) ** 3,
        jac=lambda z: 3.0 * np.asarray(z)[..., None] ** 2,
        hess=lambda z: 6.0 * np.asarray(z)[..., None, None],
        diffusion=np.eye(1),
    )
    noise = _quiet_noise(1, 10.0, 100)
    with pytest.raises(BlowUpError) as exc:
        integrate_path(m, [2.0], noise)
    assert exc.value.step > 0 and "finer grid" in str(exc.value)
    batch = NoisePath(noise.grid, np.zeros((2, 100, 1)), np.zeros((2, 100, 1)))
    out = run_batch(m, np.array([[2.0], [0.0]]), batch)
    assert out.alive.tolist() == [False, True]
    assert out.abort_step[0] > 0 and out.abort_step[1] == -1
    assert np.all(np.isfinite(out.states))


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        run_batch(builtin_kinetic_model("quadratic", 1), [0.0, 0.0], NoisePath(np.array([0.0, 1.0]), np.zeros((1, 1, 3)), np.zeros((1, 1, 3))))
