import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import qmc

from hypokinetic.model import (
    builtin_kinetic_model,
    check_hypotheses,
    eval_drift_taylor_defect,
    free_model,
    model_from_config,
    polynomial_model,
)

from oracles import central_jacobian

MODELS = [("quadratic", 1), ("quartic", 1), ("quartic", 2), ("degenerate", 1)]


def _cloud(dim, n=128, radius=2.0, seed=0):
    return qmc.scale(qmc.Sobol(dim, seed=seed).random(n), -radius, radius)


@pytest.mark.parametrize("kind,d", MODELS)
def test_jacobian_and_hessian_match_finite_differences(kind, d):
    m = builtin_kinetic_model(kind, d)
    for z in _cloud(m.dim)[:100]:
        scale = 1 + np.abs(m.drift_jacobian(z)).max()
        np.testing.assert_allclose(m.drift_jacobian(z), central_jacobian(m.drift, z, 1e-5), atol=1e-6 * scale)
        fd = central_jacobian(m.drift_jacobian, z, 1e-5)  # fd[i, j, k] = d jac_ij / d z_k
        np.testing.assert_allclose(m.drift_hessian(z), fd, atol=1e-5 * (1 + np.abs(fd).max()))
        np.testing.assert_allclose(m.lyapunov_grad(z), central_jacobian(m.lyapunov, z, 1e-6), atol=1e-6 * scale)
        np.testing.assert_allclose(m.lyapunov_hess(z), central_jacobian(m.lyapunov_grad, z, 1e-6), atol=1e-5 * scale)


def test_builtin_examples():
    quad = builtin_kinetic_model("quadratic", 1)
    quart = builtin_kinetic_model("quartic", 1)
    np.testing.assert_allclose(quad.drift(np.array([1.0, 0.0])), [0.0, -1.0])
    np.testing.assert_allclose(quart.drift(np.array([1.0, 0.0])), [0.0, -4.0])
    # H = |v|^2/2 + |x|^2/2 for the quadratic potential
    assert float(quad.lyapunov(np.array([1.0, 0.0]))) == 0.5
    assert float(quart.lyapunov(np.array([1.0, 2.0]))) == 3.0
    np.testing.assert_array_equal(quad.diffusion, [[0.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(quad.active_noise, [False, True])
    assert quad.velocity == (1,) and quad.position == (0,)


def test_batched_shapes():
    m = builtin_kinetic_model("quartic", 2)
    z = np.zeros((3, 5, 4))
    assert m.drift(z).shape == (3, 5, 4)
    assert m.drift_jacobian(z).shape == (3, 5, 4, 4)
    assert m.drift_hessian(z).shape == (3, 5, 4, 4, 4)
    assert m.lyapunov(z).shape == (3, 5)


def test_model_from_config():
    assert model_from_config("free", {"dim": 3}).dim == 3
    assert model_from_config("kinetic", {"potential": "quadratic", "phase_dim": 2}).dim == 4
    with pytest.raises(ValueError):
        model_from_config("langevin", {})
    with pytest.raises(ValueError):
        builtin_kinetic_model("sextic", 1)


@pytest.mark.parametrize("kind", ["quadratic", "quartic"])
def test_builtin_models_pass_their_hypotheses(kind):
    m = builtin_kinetic_model(kind, 1)
    rep = check_hypotheses(m, _cloud(2, 256, 3.0), np.geomspace(1, 1e3, 8))
    assert rep.passed, [(r.condition, r.worst_ratio) for r in rep.failures()]
    names = {r.condition for r in rep.results}
    assert any(n.startswith("velocity_hormander") for n in names)


def test_degenerate_model_fails_coupling():
    rep = check_hypotheses(builtin_kinetic_model("degenerate", 1), _cloud(2, 64), np.geomspace(1, 1e3, 8))
    failed = {r.condition for r in rep.failures()}
    assert any(n.startswith("velocity_hormander") for n in failed)
    assert any(n.startswith("nondegeneracy") for n in failed)
    for r in rep.failures():
        assert r.witness is None or np.all(np.isfinite(r.witness))


def test_violation_reports_witness():
    # understating C1 must produce a violation with a witness point
    from dataclasses import replace

    m = builtin_kinetic_model("quadratic", 1)
    bad = replace(m, constants=replace(m.constants, C1=0.5))
    r = check_hypotheses(bad, _cloud(2, 64), np.geomspace(1, 1e3, 8))["velocity_lyapunov:|grad_v H|^2<=C1H"]
    assert r.passed is False and r.worst_ratio > 1
    v = r.witness[1]
    H = float(m.lyapunov(r.witness))
    assert v * v / (0.5 * H) == pytest.approx(r.worst_ratio)


def test_free_model_is_not_kinetic():
    rep = check_hypotheses(free_model(2), _cloud(2, 32), np.geomspace(1, 1e3, 8))
    assert rep.passed
    assert not any(r.condition.startswith(("velocity_lyapunov", "velocity_drift_bound", "velocity_hormander")) for r in rep.results)


@given(st.floats(-3, 3), st.floats(-1, 1))
def test_taylor_defect_of_scalar_square(x, y):
    # b(x) = x^2: grad b = 2x, so the first defect is 2|y| and the second is 0
    m = polynomial_model(
        "square",
        drift=lambda z: np.asarray(z) ** 2,
        jac=lambda z: 2.0 * np.asarray(z)[..., None],
        hess=lambda z: 2.0 * np.ones(np.shape(z) + (1, 1)),
        diffusion=np.eye(1),
    )
    d1, d2 = eval_drift_taylor_defect(m, np.array([[x]]), np.array([y]))
    assert float(d1[0]) == pytest.approx(2 * abs(y), abs=1e-12)
    assert float(d2[0]) == pytest.approx(0.0, abs=1e-12)


def test_quartic_taylor_ratio_is_reported_as_empirical():
    rep = check_hypotheses(builtin_kinetic_model("quartic", 1), _cloud(2, 64), np.geomspace(1, 1e3, 8))
    r = rep["drift_taylor:Taylor defect/|y|^2"]
    assert r.passed is None and math.isfinite(r.worst_ratio)
