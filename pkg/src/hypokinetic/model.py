"""Model specifications for ``dX = b(X) dt + A dW_{S_t}`` and sampled hypothesis checks.

All callables act on batches: a state array of shape ``(..., dim)`` maps to
``(..., dim)`` for the drift, ``(..., dim, dim)`` for its Jacobian
(``jac[..., i, j] = d b_i / d x_j``) and ``(..., dim, dim, dim)`` for its
Hessian (``hess[..., i, j, k] = d^2 b_i / d x_j d x_k``). Tensor norms are
Frobenius norms throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

KINETIC_KINDS = ("quadratic", "quartic", "degenerate")


@dataclass(frozen=True)
class HypothesisConstants:
    """Constants of the drift / Lyapunov hypotheses; ``None`` means unstated."""

    kappa1: float = 0.0
    kappa2: float = 0.0
    kappa3: float = 0.0
    kappa4: float | None = None
    kappa5: float | None = None
    kappa6: float = 0.0
    C1: float | None = None
    C2: float | None = None
    C3: float | None = None
    C4: float | None = None
    C5: float | None = None
    growth: tuple = ()  # C_m for m = 0, 1, 2
    q: tuple = ()  # q_m for m = 0, 1, 2


@dataclass(frozen=True)
class ModelSpec:
    name: str
    dim: int
    drift: Callable
    drift_jacobian: Callable
    drift_hessian: Callable
    diffusion: np.ndarray
    lyapunov: Callable
    lyapunov_grad: Callable
    lyapunov_hess: Callable
    constants: HypothesisConstants = field(default_factory=HypothesisConstants)
    velocity: tuple | None = None  # indices of the velocity block for kinetic models
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        a = np.array(self.diffusion, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "diffusion", a)
        if a.shape != (self.dim, self.dim):
            raise ValueError(f"diffusion must be {self.dim}x{self.dim}, got {a.shape}")
        q = self.constants.q
        if len(q) > 1 and not 0.0 <= q[1] <= 0.5:
            raise ValueError(f"q_1 must lie in [0, 1/2], got {q[1]}")

    @property
    def position(self) -> tuple | None:
        if self.velocity is None:
            return None
        return tuple(i for i in range(self.dim) if i not in self.velocity)

    @property
    def active_noise(self) -> np.ndarray:
        """Noise coordinates that reach the state (nonzero columns of ``A``)."""
        return np.any(self.diffusion != 0.0, axis=0)


# ---------------------------------------------------------------- built-ins


class _Kinetic:
    """``b = (v, -grad V(x) - v)`` with ``V`` quadratic ``|x|^2/2``, quartic ``|x|^4``,
    or ``degenerate`` (``b = (0, -x - v)``, position frozen)."""

    def __init__(self, kind: str, d: int):
        self.kind, self.d = kind, d

    def grad_v(self, x):
        if self.kind == "quartic":
            return 4.0 * np.sum(x * x, axis=-1, keepdims=True) * x
        return x

    def hess_v(self, x):
        eye = np.eye(self.d)
        if self.kind == "quartic":
            r2 = np.sum(x * x, axis=-1)[..., None, None]
            return 4.0 * (r2 * eye + 2.0 * x[..., :, None] * x[..., None, :])
        return np.broadcast_to(eye, x.shape[:-1] + (self.d, self.d))

    def third_v(self, x):
        d = self.d
        if self.kind != "quartic":
            return np.zeros(x.shape[:-1] + (d, d, d))
        eye = np.eye(d)
        return 8.0 * (
            x[..., None, None, :] * eye[:, :, None]
            + x[..., :, None, None] * eye[None, :, :]
            + x[..., None, :, None] * eye[:, None, :]
        )

    def potential(self, x):
        r2 = np.sum(x * x, axis=-1)
        return r2 * r2 if self.kind == "quartic" else 0.5 * r2

    def drift(self, z):
        z = np.asarray(z, dtype=float)
        x, v = z[..., : self.d], z[..., self.d :]
        top = np.zeros_like(v) if self.kind == "degenerate" else v
        return np.concatenate([top, -self.grad_v(x) - v], axis=-1)

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        d = self.d
        out = np.zeros(z.shape[:-1] + (2 * d, 2 * d))
        if self.kind != "degenerate":
            out[..., :d, d:] = np.eye(d)
        out[..., d:, :d] = -self.hess_v(z[..., :d])
        out[..., d:, d:] = -np.eye(d)
        return out

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        d = self.d
        out = np.zeros(z.shape[:-1] + (2 * d,) * 3)
        out[..., d:, :d, :d] = -self.third_v(z[..., :d])
        return out

    def lyapunov(self, z):
        z = np.asarray(z, dtype=float)
        v = z[..., self.d :]
        return 0.5 * np.sum(v * v, axis=-1) + self.potential(z[..., : self.d])

    def lyapunov_grad(self, z):
        z = np.asarray(z, dtype=float)
        return np.concatenate([self.grad_v(z[..., : self.d]), z[..., self.d :]], axis=-1)

    def lyapunov_hess(self, z):
        z = np.asarray(z, dtype=float)
        d = self.d
        out = np.zeros(z.shape[:-1] + (2 * d, 2 * d))
        out[..., :d, :d] = self.hess_v(z[..., :d])
        out[..., d:, d:] = np.eye(d)
        return out


def _kinetic_constants(kind: str, d: int) -> HypothesisConstants:
    kappa6 = (3.0 - math.sqrt(5.0)) / 2.0  # min eigenvalue of [[1, -1], [-1, 2]]
    common = dict(kappa1=0.0, kappa2=2.0, kappa3=1.0, C1=2.0, C2=math.sqrt(d), C3=0.0)
    if kind == "quartic":
        # |b| <= 2|v| + 4|x|^3, |grad b| <= sqrt(2d) + 4 sqrt(d+8) |x|^2, |grad^2 b| = 8 sqrt(3d+6) |x|
        growth = (2.0 * math.sqrt(2.0) + 4.0, max(math.sqrt(2 * d), 4.0 * math.sqrt(d + 8)), 8.0 * math.sqrt(3 * d + 6))
        return HypothesisConstants(
            **common, kappa6=kappa6, C4=math.sqrt(2 * d), C5=1.0, growth=growth, q=(0.75, 0.5, 0.25)
        )
    if kind == "quadratic":
        growth = (3.0 * math.sqrt(2.0), math.sqrt(3 * d), 0.0)
        return HypothesisConstants(
            **common, kappa4=0.0, kappa5=0.0, kappa6=kappa6, C4=math.sqrt(2 * d), C5=1.0, growth=growth, q=(0.5, 0.0, 0.0)
        )
    # degenerate: b_1 = 0, so no lower bound on grad_v b_1 is available
    growth = (3.0 * math.sqrt(2.0), math.sqrt(2 * d), 0.0)
    return HypothesisConstants(
        kappa1=1.0, kappa2=2.0, kappa3=1.0, kappa4=0.0, kappa5=0.0, kappa6=0.0, C1=2.0, C2=math.sqrt(d),
        C3=1.0, C4=1.0 * math.sqrt(d), C5=1.0, growth=growth, q=(0.5, 0.0, 0.0),
    )


def builtin_kinetic_model(potential_kind: str, phase_dim: int) -> ModelSpec:
    """Damped stochastic Hamiltonian system on ``R^d_x x R^d_v`` with noise on ``v`` only."""
    if potential_kind not in KINETIC_KINDS:
        raise ValueError(f"potential_kind must be one of {KINETIC_KINDS}, got {potential_kind!r}")
    if phase_dim < 1:
        raise ValueError("phase_dim must be >= 1")
    k = _Kinetic(potential_kind, phase_dim)
    d = phase_dim
    a = np.zeros((2 * d, 2 * d))
    a[d:, d:] = np.eye(d)
    return ModelSpec(
        name=f"kinetic_{potential_kind}",
        dim=2 * d,
        drift=k.drift,
        drift_jacobian=k.jacobian,
        drift_hessian=k.hessian,
        diffusion=a,
        lyapunov=k.lyapunov,
        lyapunov_grad=k.lyapunov_grad,
        lyapunov_hess=k.lyapunov_hess,
        constants=_kinetic_constants(potential_kind, d),
        velocity=tuple(range(d, 2 * d)),
        params={"potential_kind": potential_kind, "phase_dim": phase_dim},
    )


class _Free:
    def __init__(self, dim):
        self.dim = dim

    def drift(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape + (self.dim,))

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape + (self.dim, self.dim))

    def lyapunov(self, z):
        z = np.asarray(z, dtype=float)
        return 0.5 * np.sum(z * z, axis=-1)

    def lyapunov_grad(self, z):
        return np.asarray(z, dtype=float)

    def lyapunov_hess(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.eye(self.dim), z.shape + (self.dim,)).copy()


def free_model(dim: int) -> ModelSpec:
    """``b = 0``, ``A = I``, ``H = |x|^2 / 2``: the state is the noise itself."""
    f = _Free(dim)
    return ModelSpec(
        name="free",
        dim=dim,
        drift=f.drift,
        drift_jacobian=f.jacobian,
        drift_hessian=f.hessian,
        diffusion=np.eye(dim),
        lyapunov=f.lyapunov,
        lyapunov_grad=f.lyapunov_grad,
        lyapunov_hess=f.lyapunov_hess,
        constants=HypothesisConstants(
            kappa1=0.0, kappa2=2.0, kappa3=1.0, kappa4=0.0, kappa5=0.0, kappa6=1.0, C3=0.0,
            growth=(0.0, 0.0, 0.0), q=(0.0, 0.0, 0.0),
        ),
        params={"dim": dim},
    )


def model_from_config(name: str, params: dict) -> ModelSpec:
    params = dict(params)
    if name == "free":
        return free_model(int(params.pop("dim", 1)))
    if name == "kinetic":
        return builtin_kinetic_model(params.pop("potential", "quartic"), int(params.pop("phase_dim", 1)))
    raise ValueError(f"unknown model {name!r}")


# --------------------------------------------------------- hypothesis checks


@dataclass
class ConditionResult:
    condition: str
    worst_ratio: float
    witness: np.ndarray | None
    passed: bool | None  # None when the constant is unstated: the ratio is an empirical supremum
    note: str = ""


@dataclass
class HypothesisReport:
    model: str
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed is not False for r in self.results)

    def __getitem__(self, condition: str) -> ConditionResult:
        for r in self.results:
            if r.condition == condition:
                return r
        raise KeyError(condition)

    def failures(self) -> list:
        return [r for r in self.results if r.passed is False]


SLACK = 1e-12


def _worst(name, lhs, rhs, cloud, lower=False, note=""):
    """Worst ratio of an inequality ``lhs <= rhs`` (or ``lhs >= rhs`` when ``lower``)."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if lower:
            ratio = np.where(rhs <= 0, 0.0, rhs / lhs)
        else:
            ratio = np.where(lhs <= 0, 0.0, lhs / rhs)
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    flat = ratio.reshape(ratio.shape[0], -1).max(axis=1) if ratio.ndim > 1 else ratio
    i = int(np.argmax(flat))
    worst = float(flat[i])
    return ConditionResult(name, worst, np.asarray(cloud[i]), worst <= 1.0 + SLACK, note)


def _empirical(name, values, cloud, bound=None, note=""):
    values = np.asarray(values, dtype=float)
    i = int(np.argmax(values))
    worst = float(values[i])
    passed = None if bound is None else bool(worst <= bound * (1 + SLACK) + SLACK)
    return ConditionResult(name, worst, np.asarray(cloud[i]), passed, note)


def direction_mesh(dim: int, n: int | None = None) -> np.ndarray:
    """Deterministic unit vectors: a grid of angles in 2-d, normalized Halton-Gaussian points otherwise."""
    n = n or 32 * dim
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2 * math.pi * np.arange(n) / n
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    from scipy.special import ndtri

    pts = qmc.Halton(dim, scramble=False).random(n + 1)[1:]
    g = ndtri(np.clip(pts, 1e-12, 1 - 1e-12))
    g = np.vstack([np.eye(dim), -np.eye(dim), g])
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _fro(a, nd):
    return np.sqrt(np.sum(a * a, axis=tuple(range(-nd, 0))))


def check_hypotheses(spec: ModelSpec, cloud, radius_grid, ball_radius: float = 1.0) -> HypothesisReport:
    """Evaluate the standing hypotheses on a point cloud.

    Violations are data: every condition reports its worst ratio (``<= 1`` passes)
    and a witness point. Kinetic-only conditions are skipped for non-kinetic models.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[0] == 0:
        raise ValueError("cloud must be nonempty")
    c = spec.constants
    A = spec.diffusion
    b = spec.drift(cloud)
    jac = spec.drift_jacobian(cloud)
    hess = spec.drift_hessian(cloud)
    H = spec.lyapunov(cloud)
    gH = spec.lyapunov_grad(cloud)
    hH = spec.lyapunov_hess(cloud)
    out = []

    # Lyapunov: nonnegative and coercive along rays
    out.append(_worst("H>=0", H, 0.0, cloud, lower=True))
    out.append(_coercivity(spec, radius_grid))

    bgh = np.sum(b * gH, axis=-1)
    if c.C3 is not None:
        out.append(_worst("drift_lyapunov:b.gradH<=C3H", bgh, c.C3 * H, cloud))
    out.append(_worst("lyapunov:b.gradH<=k1H", bgh, c.kappa1 * H, cloud))
    proj = gH @ A  # sum_i d_i H a_ik
    out.append(_worst("lyapunov:|gradH.a_k|^2<=k2H", proj**2, c.kappa2 * H[:, None], cloud))
    curv = np.einsum("nij,ik,jk->nk", hH, A, A)
    out.append(_worst("lyapunov:a_k.hessH.a_k<=k3", curv, c.kappa3 * np.ones_like(curv), cloud))

    norms = (np.linalg.norm(b, axis=-1), _fro(jac, 2), _fro(hess, 3))
    for m, (Cm, qm) in enumerate(zip(c.growth, c.q)):
        out.append(_worst(f"drift_growth:|grad^{m} b|<=C(H^q+1)", norms[m], Cm * (H**qm + 1.0), cloud))
    if len(c.q) > 1:
        q1 = c.q[1]
        out.append(ConditionResult("drift_growth:q1 in [0,1/2]", q1, None, 0.0 <= q1 <= 0.5))

    # nondegeneracy: inf_u |uA|^2 + |u grad b A|^2 >= kappa6
    mesh = direction_mesh(spec.dim)
    uA = mesh @ A
    uBA = np.einsum("mi,nij,jk->nmk", mesh, jac, A)
    form = np.sum(uA**2, axis=-1)[None, :] + np.sum(uBA**2, axis=-1)
    r = _worst("nondegeneracy:|uA|^2+|u.gradb.A|^2>=k6", form, c.kappa6 * np.ones_like(form), cloud, lower=True)
    if c.kappa6 <= 0:
        k = int(np.argmin(form.min(axis=1)))
        r = ConditionResult(r.condition, math.inf, cloud[k], False, "kappa6 must be positive")
    out.append(r)

    if spec.velocity is not None:
        vi, xi = list(spec.velocity), list(spec.position)
        gv = gH[:, vi]
        if c.C1 is not None:
            out.append(_worst("velocity_lyapunov:|grad_v H|^2<=C1H", np.sum(gv**2, -1), c.C1 * H, cloud))
        if c.C2 is not None:
            out.append(_worst("velocity_lyapunov:|hess_v H|<=C2", _fro(hH[:, vi][:, :, vi], 2), c.C2 * np.ones_like(H), cloud))
        if c.C4 is not None:
            jv = jac[:, :, vi]
            hv = hess[:, :, vi][:, :, :, vi]
            out.append(
                _worst(
                    "velocity_drift_bound:|grad_v b|+|grad_v^2 b|<=C4",
                    _fro(jv, 2) + _fro(hv, 3),
                    c.C4 * np.ones_like(H),
                    cloud,
                    note="third v-derivative term not evaluated (no analytic third derivative)",
                )
            )
        if c.C5 is not None:
            dv = len(vi)
            umesh = direction_mesh(dv)
            b1v = jac[:, xi][:, :, vi]  # d b_1 / d v
            ub = np.einsum("mi,nij->nmj", umesh, b1v)
            out.append(
                _worst("velocity_hormander:|u.grad_v b1|^2>=C5|u|^2", np.sum(ub**2, -1), c.C5 * np.ones(ub.shape[:2]), cloud, lower=True)
            )

    # Lipschitz / Taylor ratios over a ball mesh of perturbations
    ys = _ball_mesh(spec.dim, ball_radius)
    r1 = np.zeros(len(cloud))
    r2 = np.zeros(len(cloud))
    for y in ys:
        ny = np.linalg.norm(y)
        if ny == 0:
            continue
        d1, d2 = eval_drift_taylor_defect(spec, cloud, y)
        r1 = np.maximum(r1, d1 / min(1.0, ny))
        r2 = np.maximum(r2, d2 / ny**2)
    out.append(_empirical("jacobian_lipschitz:|(gradb(x+Ay)-gradb(x))A|/(1^|y|)", r1, cloud, c.kappa4))
    out.append(_empirical("drift_taylor:Taylor defect/|y|^2", r2, cloud, c.kappa5))
    return HypothesisReport(spec.name, out)


def _coercivity(spec: ModelSpec, radius_grid) -> ConditionResult:
    radii = np.sort(np.asarray(radius_grid, dtype=float))
    mesh = direction_mesh(spec.dim)
    pts = radii[:, None, None] * mesh[None, :, :]
    H = spec.lyapunov(pts)  # (radius, direction)
    nondecreasing = np.all(np.diff(H, axis=0) >= -1e-12 * (1 + np.abs(H[1:])), axis=0)
    grows = H[-1] >= H[0] + radii[-1] - radii[0]
    ok = nondecreasing & grows
    i = int(np.argmin(ok)) if not ok.all() else int(np.argmin(H[-1]))
    return ConditionResult(
        "3.2:H->inf along rays",
        float(np.min(H[-1])),
        mesh[i] * radii[-1],
        bool(ok.all()),
        note="worst_ratio holds min_u H(r_max u)",
    )


def _ball_mesh(dim: int, radius: float) -> np.ndarray:
    dirs = direction_mesh(dim, 8 * dim)
    scales = radius * np.array([1e-3, 1e-2, 0.1, 0.5, 1.0, 3.0])
    return (scales[:, None, None] * dirs[None]).reshape(-1, dim)


def eval_drift_taylor_defect(spec: ModelSpec, x, y):
    """First- and second-order defects of ``grad b`` along the noise direction ``A y``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = spec.diffusion
    ay = y @ A.T
    j0 = spec.drift_jacobian(x)
    j1 = spec.drift_jacobian(x + ay)
    h0 = spec.drift_hessian(x)
    first = (j1 - j0) @ A
    second = (j1 - j0 - np.einsum("...ijk,...k->...ij", h0, np.broadcast_to(ay, x.shape))) @ A
    return _fro(first, 2), _fro(second, 2)


def polynomial_model(name: str, drift, jac, hess, diffusion, lyapunov=None, grad=None, lhess=None, **kw) -> ModelSpec:
    """Programmatic extension point: wrap user-supplied vectorized callables."""
    dim = np.asarray(diffusion).shape[0]
    lyapunov = lyapunov or (lambda z: 0.5 * np.sum(np.asarray(z) ** 2, axis=-1))
    grad = grad or (lambda z: np.asarray(z, dtype=float))
    lhess = lhess or (lambda z: np.broadcast_to(np.eye(dim), np.shape(z) + (dim,)).copy())
    return ModelSpec(name, dim, drift, jac, hess, diffusion, lyapunov, grad, lhess, **kw)
