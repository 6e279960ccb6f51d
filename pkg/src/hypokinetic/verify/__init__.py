"""Ensembles and the probe suite."""
from .density import DensityEstimate, density_tail_probe, kde_density, kde_tensor_grid
from .ensemble import EnsembleResult, ensemble_run
from .generator import CosineWave, GaussianBump, LinearFunction, QuadraticForm, TestFunction, generator_apply
from .probe_result import FAIL, INCONCLUSIVE, PASS, XFAIL, ProbeResult, combine
from .probes import (
    covariance_scaling_probe,
    density_probe,
    exp_moment_probe,
    flow_moment_probe,
    fokker_planck_residual,
    small_deviation_probe,
    subordinator_moment_probe,
)
