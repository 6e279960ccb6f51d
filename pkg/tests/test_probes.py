import math

import numpy as np
import pytest

from hypokinetic.model import builtin_kinetic_model, free_model
from hypokinetic.subordinator import StableFamily, SubordinatorSpec, TemperedStableFamily, ZeroFamily
from hypokinetic.verify import probes as P
from hypokinetic.verify.generator import CosineWave, GaussianBump
from hypokinetic.verify.probe_result import FAIL, INCONCLUSIVE, PASS, XFAIL, ProbeResult, combine


def test_combine_precedence():
    assert combine([]) == PASS
    assert combine([PASS, XFAIL]) == PASS
    assert combine([PASS, INCONCLUSIVE]) == INCONCLUSIVE
    assert combine([INCONCLUSIVE, FAIL, PASS]) == FAIL
    with pytest.raises(ValueError):
        combine(["MAYBE"])


def test_probe_result_summary():
    r = ProbeResult("x", 1.0, 0.1, 2.0, PASS)
    assert r.summary() == {"probe": "x", "estimate": 1.0, "uncertainty": 0.1, "threshold": 2.0, "verdict": PASS}
    assert not r.failed


def test_median_of_means_resists_outliers():
    x = np.ones(1000)
    x[3] = 1e12
    med, _ = P.median_of_means(x)
    assert med == 1.0


def test_bounded_rule():
    assert P._bounded([5.0, 3.0, 1.0], [0.0, 0.0, 0.0], 10.0)
    assert not P._bounded([50.0, 3.0, 1.0], [0.0, 0.0, 0.0], 10.0)
    assert P._bounded([50.0, 3.0, 1.0], [15.0, 0.0, 0.0], 10.0)
    assert not P._bounded([math.inf, 1.0], [0.0, 0.0], 10.0)


def test_gaussian_fokker_planck_residual_small():
    res = P.fokker_planck_residual(
        free_model(1), SubordinatorSpec((1.0,), (ZeroFamily(),)), [0.0], 0.5, 0.05,
        [GaussianBump((0.0,), 1.0), CosineWave((1.5,))], 5000, seed=0, h=0.01,
    )
    assert [r.verdict for r in res] == [PASS, PASS]
    assert res[0].probe == "fokker_planck[0]"


def test_fokker_planck_rejects_bad_window():
    with pytest.raises(ValueError):
        P.fokker_planck_residual(free_model(1), SubordinatorSpec((1.0,), (ZeroFamily(),)), [0.0], 0.1, 0.2, [], 10)


def test_fokker_planck_detects_wrong_generator():
    # simulate with clock speed 2 but evaluate the generator of speed 1
    import hypokinetic.verify.probes as mod

    fast = SubordinatorSpec((2.0,), (ZeroFamily(),))
    slow = SubordinatorSpec((1.0,), (ZeroFamily(),))
    orig = mod.generator_parts
    try:
        mod.generator_parts = lambda m, s, f, z, inner="closed": orig(m, slow, f, z, inner=inner)
        res = P.fokker_planck_residual(free_model(1), fast, [0.0], 0.5, 0.05, [GaussianBump((0.0,), 1.0)], 5000, h=0.01)
    finally:
        mod.generator_parts = orig
    assert res[0].verdict == FAIL


def test_small_deviation_stable():
    res = P.small_deviation_probe(SubordinatorSpec((0.0,), (StableFamily(0.5),)), [1.0], 1.0, [0.05, 0.2], 0.9, 4000)
    assert all(r.verdict == PASS for r in res)
    assert all(0.0 <= r.estimate <= 1.0 for r in res)


def test_small_deviation_rejects_bad_f():
    spec = SubordinatorSpec((0.0,), (StableFamily(0.5),))
    with pytest.raises(ValueError):
        P.small_deviation_probe(spec, [-1.0], 1.0, [0.1], 0.5, 10)
    with pytest.raises(ValueError):
        P.small_deviation_probe(spec, [0.0], 1.0, [0.1], 0.5, 10)


def test_clock_moments_tempered():
    r = P.subordinator_moment_probe(SubordinatorSpec((0.0,), (TemperedStableFamily(0.5, lam=1.0),)), [0.25, 0.0625, 0.015625], 1.0, 4000)
    assert r.verdict == PASS


def test_covariance_scaling_without_theta_is_inconclusive():
    m = free_model(1)
    spec = SubordinatorSpec((0.0,), (ZeroFamily(),))
    r = P.covariance_scaling_probe(m, spec, [0.0], [0.25, 0.125], 64, n_steps=8)
    assert r.verdict == INCONCLUSIVE


def test_covariance_scaling_degenerate_fails():
    m = builtin_kinetic_model("degenerate", 1)
    spec = SubordinatorSpec.for_kinetic(1, ZeroFamily(), drift=1.0)
    r = P.covariance_scaling_probe(m, spec, [0.0, 0.0], [0.25, 0.125], 64, n_steps=8)
    assert r.verdict == FAIL and r.details["max_degenerate_fraction"] == 1.0


def test_exp_moment_tempered_small():
    m = builtin_kinetic_model("quadratic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=2.0))
    r = P.exp_moment_probe(m, spec, [[0.5, 0.0], [0.0, 1.0]], 0.5, 2000, 1.0, h=0.01)
    assert r.verdict == PASS and 1.0 <= r.estimate <= 10.0
    assert len(r.table) == 2


def test_flow_moments_quartic_small():
    m = builtin_kinetic_model("quartic", 1)
    spec = SubordinatorSpec.for_kinetic(1, TemperedStableFamily(0.5, lam=1.0))
    r = P.flow_moment_probe(m, spec, [0.5, 0.0], [0.25, 0.0625, 0.015625], 2000, n_steps=16)
    assert r.verdict == PASS


def test_density_probe_gaussian():
    results, box, ens = P.density_probe(free_model(2), SubordinatorSpec((1.0, 1.0), (ZeroFamily(), ZeroFamily())), [0.0, 0.0], 1.0, 5000, h=0.1)
    assert [r.verdict for r in results] == [PASS, PASS]
    assert ens.n_paths == 5000 and box.axes is not None
