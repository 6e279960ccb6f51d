"""Subordinated Brownian noise ``L_t = W_{S_t}``.

The noise is always generated conditionally on the clock: given the
subordinator increments, each ``dL`` is an exact centred Gaussian with
variance ``dS``. The symbol follows from the subordination identity
``E exp(i z.L_t) = E exp(-sum_k z_k^2 S^k_t / 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .subordinator import (
    QuadratureError,
    SubordinatorIncrements,
    SubordinatorSpec,
    ZeroFamily,
    _sum_cells,
    laplace_exponent,
)


@dataclass
class NoisePath:
    """Clock and noise increments on a shared grid (path axis optional, leading)."""

    grid: np.ndarray
    dS: np.ndarray
    dL: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.dS.shape[-2]

    @property
    def dim(self) -> int:
        return self.dS.shape[-1]

    def coarsen(self, factor: int) -> "NoisePath":
        """Merge ``factor`` consecutive cells; increments add exactly."""
        return NoisePath(self.grid[::factor], _sum_cells(self.dS, factor), _sum_cells(self.dL, factor))

    def path(self, index: int) -> "NoisePath":
        return NoisePath(self.grid, self.dS[index], self.dL[index])


def sample_noise_path(sub: SubordinatorIncrements, rng: np.random.Generator) -> NoisePath:
    z = rng.standard_normal(sub.deltas.shape)
    return NoisePath(sub.grid, sub.deltas, np.sqrt(sub.deltas) * z)


def characteristic_exponent(spec: SubordinatorSpec, z) -> float:
    """``Psi(z) = psi(z**2 / 2)`` so that ``E exp(i z.L_t) = exp(-t Psi(z))``."""
    z = np.asarray(z, dtype=float)
    return laplace_exponent(spec, 0.5 * z**2)


def gaussian_clipped_second_moment(u):
    """``E[min(1, u Z^2)]`` for a standard normal ``Z``."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    a = 1.0 / np.sqrt(u[pos])
    inner = special.erf(a / math.sqrt(2.0)) - 2.0 * a * np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    out[pos] = u[pos] * inner + special.erfc(a / math.sqrt(2.0))
    return out


def levy_measure_small_moment(spec: SubordinatorSpec, tol: float = 1e-12) -> float:
    """``int (1 ^ |y|^2) nu_L(dy)`` as a Gaussian mixture over the clock's Lévy measure.

    Axis measures make ``nu_L`` live on the axes too, so the integral is a sum
    of one-dimensional integrals ``int E[1 ^ u Z^2] nu_i(du)``.
    """
    total = 0.0
    for i, fam in enumerate(spec.components):
        if isinstance(fam, ZeroFamily):
            continue
        a = fam.alpha
        # near 0 the integrand is ~ u * nu(du) ~ u^(-alpha); split at 1 and use the algebraic weight
        def smooth(u, fam=fam, a=a):
            # E[1 ^ u Z^2] / u -> 1 and u^(1+alpha) nu(u) -> c as u -> 0
            if u <= 0.0:
                return fam.c
            m = float(gaussian_clipped_second_moment(np.array([u]))[0])
            return m / u * u ** (1.0 + a) * float(fam.levy_density(u))

        parts = [
            integrate.quad(smooth, 0.0, 1.0, weight="alg", wvar=(-a, 0.0), epsabs=tol, epsrel=1e-12, limit=200),
            integrate.quad(
                lambda u: gaussian_clipped_second_moment(u) * fam.levy_density(u),
                1.0,
                np.inf,
                epsabs=tol,
                epsrel=1e-12,
                limit=200,
            ),
        ]
        err = sum(p[1] for p in parts)
        val = sum(p[0] for p in parts)
        if err > 1e-8 * max(1.0, abs(val)):
            raise QuadratureError(f"nu_L small-moment quadrature did not converge on component {i}")
        total += val
    return total
