"""Anisotropic subordinators built from independent axis families.

Each coordinate ``S^i`` is an independent subordinator with drift
``drift[i]`` and a one-dimensional Lévy density from one of three
families. Because the Lévy measure lives on the coordinate axes, every
integral against it reduces to a one-dimensional integral per component.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, special

MAX_REJECTION_ROUNDS = 10**6


class SamplingError(RuntimeError):
    pass


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ZeroFamily:
    """No jumps."""

    name = "zero"

    @property
    def small_index(self):
        return None

    def levy_density(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def jump_exponent(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def truncated_moment(self, eps: float, order: int = 1) -> float:
        return 0.0

    def tail_mass(self, big_u: float) -> float:
        return 0.0

    def has_exp_moment(self, p: float) -> bool:
        return True

    def sample_jumps(self, h, size, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(size)

    def describe(self) -> dict:
        return {"family": "zero"}


@dataclass(frozen=True)
class StableFamily:
    """Lévy density ``c * u**(-1-alpha)`` on ``(0, inf)``.

    The Laplace exponent of the jump part is ``c * Gamma(1-alpha)/alpha * z**alpha``;
    ``c = alpha / Gamma(1 - alpha)`` gives exactly ``z**alpha``.
    """

    alpha: float
    c: float = field(default=float("nan"))

    name = "stable"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if math.isnan(self.c):
            object.__setattr__(self, "c", unit_scale(self.alpha))
        if self.c <= 0:
            raise ValueError(f"scale c must be positive, got {self.c}")

    @property
    def small_index(self):
        return self.alpha

    @property
    def exponent_scale(self) -> float:
        return self.c * math.gamma(1.0 - self.alpha) / self.alpha

    def levy_density(self, u):
        u = np.asarray(u, dtype=float)
        return self.c * u ** (-1.0 - self.alpha)

    def jump_exponent(self, z):
        return self.exponent_scale * np.asarray(z, dtype=float) ** self.alpha

    def truncated_moment(self, eps: float, order: int = 1) -> float:
        """``int_0^eps u**order nu(du)`` for ``order >= 1``."""
        k = order - self.alpha
        return self.c * eps**k / k

    def tail_mass(self, big_u: float) -> float:
        return self.c * big_u ** (-self.alpha) / self.alpha

    def has_exp_moment(self, p: float) -> bool:
        return False

    def sample_jumps(self, h, size, rng: np.random.Generator) -> np.ndarray:
        h = np.broadcast_to(h, size)
        return (h * self.exponent_scale) ** (1.0 / self.alpha) * positive_stable(self.alpha, size, rng)

    def describe(self) -> dict:
        return {"family": "stable", "alpha": self.alpha, "c": self.c}


@dataclass(frozen=True)
class TemperedStableFamily:
    """Lévy density ``c * u**(-1-alpha) * exp(-lam*u)``.

    Jump exponent ``c Gamma(1-alpha)/alpha * ((lam+z)**alpha - lam**alpha)``.
    """

    alpha: float
    c: float = field(default=float("nan"))
    lam: float = 1.0

    name = "tempered_stable"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if math.isnan(self.c):
            object.__setattr__(self, "c", unit_scale(self.alpha))
        if self.c <= 0:
            raise ValueError(f"scale c must be positive, got {self.c}")
        if self.lam <= 0:
            raise ValueError(f"tempering lam must be positive, got {self.lam}")

    @property
    def small_index(self):
        return self.alpha

    @property
    def exponent_scale(self) -> float:
        return self.c * math.gamma(1.0 - self.alpha) / self.alpha

    def levy_density(self, u):
        u = np.asarray(u, dtype=float)
        return self.c * u ** (-1.0 - self.alpha) * np.exp(-self.lam * u)

    def jump_exponent(self, z):
        z = np.asarray(z, dtype=float)
        a, lam = self.alpha, self.lam
        return self.exponent_scale * ((lam + z) ** a - lam**a)

    def truncated_moment(self, eps: float, order: int = 1) -> float:
        s = order - self.alpha
        # c * int_0^eps u^(s-1) e^(-lam u) du
        return self.c * self.lam ** (-s) * special.gamma(s) * special.gammainc(s, self.lam * eps)

    def tail_mass(self, big_u: float) -> float:
        # upper bound: u^(-1-alpha) <= U^(-1-alpha) on (U, inf)
        return self.c * big_u ** (-1.0 - self.alpha) * math.exp(-self.lam * big_u) / self.lam

    def has_exp_moment(self, p: float) -> bool:
        return p < self.lam

    def sample_jumps(self, h, size, rng: np.random.Generator) -> np.ndarray:
        """Exponential tilting of the stable law by rejection.

        A stable variate ``X`` with the same small-jump behaviour is kept with
        probability ``exp(-lam X)``; the accepted law has Laplace exponent
        ``h * jump_exponent``. Mean acceptance is ``exp(-h c' lam**alpha)``.
        """
        base = StableFamily(self.alpha, self.c)
        hflat = np.broadcast_to(h, size).reshape(-1)
        out = np.empty(size)
        flat = out.reshape(-1)
        todo = np.arange(flat.size)
        rounds = 0
        while todo.size:
            rounds += 1
            if rounds > MAX_REJECTION_ROUNDS:
                raise SamplingError(
                    f"tempered-stable rejection exceeded {MAX_REJECTION_ROUNDS} rounds "
                    f"(lam={self.lam}, h={hflat[todo].max()})"
                )
            x = base.sample_jumps(hflat[todo], todo.size, rng)
            keep = rng.random(todo.size) < np.exp(-self.lam * x)
            flat[todo[keep]] = x[keep]
            todo = todo[~keep]
        return out

    def describe(self) -> dict:
        return {"family": "tempered_stable", "alpha": self.alpha, "c": self.c, "lam": self.lam}


Family = ZeroFamily | StableFamily | TemperedStableFamily


def unit_scale(alpha: float) -> float:
    """Lévy-density coefficient making the stable jump exponent exactly ``z**alpha``."""
    return alpha / math.gamma(1.0 - alpha)


def positive_stable(alpha: float, size, rng: np.random.Generator) -> np.ndarray:
    """Kanter's representation of the positive stable law with ``E exp(-zX) = exp(-z**alpha)``."""
    u = rng.uniform(0.0, math.pi, size)
    e = rng.standard_exponential(size)
    a = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    return a * b


def family_from_dict(d: dict) -> Family:
    d = dict(d)
    name = d.pop("family")
    if name == "zero":
        if d:
            raise ValueError(f"zero family takes no parameters, got {sorted(d)}")
        return ZeroFamily()
    if name == "stable":
        return StableFamily(**d)
    if name == "tempered_stable":
        return TemperedStableFamily(**d)
    raise ValueError(f"unknown subordinator family {name!r}")


@dataclass(frozen=True)
class SubordinatorSpec:
    drift: tuple
    components: tuple

    def __post_init__(self):
        drift = tuple(float(x) for x in self.drift)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "components", tuple(self.components))
        if len(drift) != len(self.components):
            raise ValueError("drift and components must have the same length")
        if any(x < 0 for x in drift):
            raise ValueError("subordinator drift must be componentwise nonnegative")

    @property
    def dim(self) -> int:
        return len(self.drift)

    @property
    def has_jumps(self) -> bool:
        return any(not isinstance(c, ZeroFamily) for c in self.components)

    @classmethod
    def uniform(cls, family: Family, dim: int, drift: float = 0.0) -> "SubordinatorSpec":
        return cls((drift,) * dim, (family,) * dim)

    @classmethod
    def for_kinetic(cls, phase_dim: int, family: Family, drift: float = 0.0) -> "SubordinatorSpec":
        """Clock for the flat ``(x, v)`` state; position axes carry no noise."""
        return cls(
            (0.0,) * phase_dim + (drift,) * phase_dim,
            (ZeroFamily(),) * phase_dim + (family,) * phase_dim,
        )

    def describe(self) -> dict:
        return {"drift": list(self.drift), "components": [c.describe() for c in self.components]}


@dataclass
class SubordinatorIncrements:
    """Increments of ``S`` on a grid; ``deltas`` is ``(N, d)`` or ``(P, N, d)``."""

    grid: np.ndarray
    deltas: np.ndarray

    def path(self) -> np.ndarray:
        zero = np.zeros(self.deltas.shape[:-2] + (1, self.deltas.shape[-1]))
        return np.concatenate([zero, np.cumsum(self.deltas, axis=-2)], axis=-2)

    def coarsen(self, factor: int) -> "SubordinatorIncrements":
        return SubordinatorIncrements(self.grid[::factor], _sum_cells(self.deltas, factor))


def _sum_cells(a: np.ndarray, factor: int) -> np.ndarray:
    n = a.shape[-2]
    if n % factor:
        raise ValueError(f"{n} cells cannot be grouped by {factor}")
    shape = a.shape[:-2] + (n // factor, factor, a.shape[-1])
    return a.reshape(shape).sum(axis=-2)


def check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be strictly increasing and start at 0")
    return grid


def sample_increments(
    spec: SubordinatorSpec, grid, rng: np.random.Generator, n_paths: int | None = None
) -> SubordinatorIncrements:
    """Exact increments of ``S`` over each grid cell.

    With ``n_paths`` the result has a leading path axis.
    """
    grid = check_grid(grid)
    h = np.diff(grid)
    lead = () if n_paths is None else (n_paths,)
    deltas = np.empty(lead + (h.size, spec.dim))
    for i, (theta, fam) in enumerate(zip(spec.drift, spec.components)):
        deltas[..., i] = theta * h + fam.sample_jumps(h, lead + (h.size,), rng)
    return SubordinatorIncrements(grid, deltas)


def laplace_exponent(spec: SubordinatorSpec, z) -> float:
    """``psi`` with ``E exp(-z.S_t) = exp(-t psi(z))``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (spec.dim,):
        raise ValueError(f"z must have shape ({spec.dim},)")
    if np.any(z < 0):
        raise ValueError("laplace_exponent requires z >= 0 componentwise")
    total = float(np.dot(spec.drift, z))
    for zi, fam in zip(z, spec.components):
        total += float(fam.jump_exponent(zi))
    return total


def first_moment_quadrature(fam: Family, eps: float, tol: float = 1e-10) -> float:
    """``int_0^eps u nu(du)`` by adaptive quadrature, split at ``eps/2``.

    The algebraic endpoint singularity ``u**(-alpha)`` is handled by QUADPACK's
    algebraic weight on the lower half.
    """
    if isinstance(fam, ZeroFamily):
        return 0.0
    a = fam.alpha

    def smooth(u):
        # u**(1+alpha) nu(u) extends continuously to u = 0 with value c
        return fam.c if u <= 0.0 else u ** (1.0 + a) * float(fam.levy_density(u))

    lo, err_lo = integrate.quad(smooth, 0.0, eps / 2, weight="alg", wvar=(-a, 0.0), epsabs=tol, epsrel=0)
    hi, err_hi = integrate.quad(lambda u: u * fam.levy_density(u), eps / 2, eps, epsabs=tol, epsrel=0)
    if err_lo + err_hi > 10 * tol:
        raise QuadratureError(f"first-moment quadrature did not converge for {fam.describe()}")
    return lo + hi


def phi(spec: SubordinatorSpec, eps: float, method: str = "closed", active=None) -> float:
    """``min_i (drift_i + int_{u<=eps} u nu_i(du) / e)`` over the (active) components."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    vals = []
    for i, (theta, fam) in enumerate(zip(spec.drift, spec.components)):
        if active is not None and not active[i]:
            continue
        try:
            m = fam.truncated_moment(eps) if method == "closed" else first_moment_quadrature(fam, eps)
        except QuadratureError as exc:
            raise QuadratureError(f"component {i}: {exc}") from exc
        vals.append(theta + m / math.e)
    return min(vals)


def theta_index(spec: SubordinatorSpec, active=None):
    """Largest ``theta`` with ``eps**(theta-1) phi(eps)`` bounded away from 0, or ``None``."""
    best = 1.0
    for i, (theta, fam) in enumerate(zip(spec.drift, spec.components)):
        if active is not None and not active[i]:
            continue
        if theta > 0:
            continue
        if fam.small_index is None:
            return None
        best = min(best, fam.small_index)
    return best


def exp_moment_predicate(spec: SubordinatorSpec, p: float, active=None) -> bool:
    if p <= 0:
        raise ValueError("p must be positive")
    return all(
        fam.has_exp_moment(p)
        for i, fam in enumerate(spec.components)
        if active is None or active[i]
    )


def spec_from_dicts(drift: Sequence[float], components: Sequence[dict]) -> SubordinatorSpec:
    return SubordinatorSpec(tuple(drift), tuple(family_from_dict(c) for c in components))
