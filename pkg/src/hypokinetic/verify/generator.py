"""The Markov generator of ``dX = b(X) dt + A dW_{S_t}`` applied to smooth test functions.

For independent axis clocks the jump part splits over the noise axes. Axis
``i`` moves the state along the column ``a_i`` of ``A`` by ``sqrt(u) Z``, so

    L f(z) = b.grad f + 1/2 sum_i drift_i a_i^T (hess f) a_i
             + sum_i int_0^inf (E f(z + a_i sqrt(u) Z) - f(z)) nu_i(du).

The outer integral runs over ``log u`` with composite Gauss-Legendre panels
between a small cutoff and a tail point ``U``. Below the cutoff the integrand
is replaced by its second-order Taylor term; beyond ``U`` only the ``-f(z)``
part is kept, exactly. The inner Gaussian mean uses Hermite quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import hermite_e, legendre

from ..model import ModelSpec
from ..subordinator import QuadratureError, SubordinatorSpec, ZeroFamily

SMALL_U_CUTOFF = 1e-6
TAIL_TOL = 1e-12
MAX_TAIL_POINT = 1e150
PANEL_WIDTH = 0.5  # in log u
INNER_NODES = 32
INNER_MAX_NODES = 256
INNER_RTOL = 1e-10
INNER_ATOL = 1e-13

_GL_X, _GL_W = legendre.leggauss(16)


# ------------------------------------------------------------ test functions


class TestFunction:
    """Smooth test function on the flat state; all methods broadcast over leading axes."""

    __test__ = False  # not a pytest class

    def value(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise NotImplementedError

    def hess(self, z):
        raise NotImplementedError

    def gaussian_mean(self, z, a, u):
        """``E f(z + a sqrt(u) Z)`` for a standard normal ``Z``; shape ``z.shape[:-1] + u.shape``."""
        return None

    # length over which f varies; Hermite nodes must sample it finely (inf: polynomial)
    length_scale = math.inf

    # sup norms (inf when unbounded)
    sup_value = math.inf
    sup_grad = math.inf
    sup_hess = math.inf

    def sup_dir4(self, a) -> float:
        """``sup_z |d^4/ds^4 f(z + s a)|``."""
        return math.inf

    @property
    def c2_norm(self) -> float:
        return self.sup_value + self.sup_grad + self.sup_hess


@dataclass(frozen=True)
class CosineWave(TestFunction):
    """``cos(w.z + phase)``."""

    w: tuple
    phase: float = 0.0

    def _arg(self, z):
        return np.asarray(z, dtype=float) @ np.asarray(self.w, dtype=float) + self.phase

    def value(self, z):
        return np.cos(self._arg(z))

    def grad(self, z):
        return -np.sin(self._arg(z))[..., None] * np.asarray(self.w)

    def hess(self, z):
        w = np.asarray(self.w, dtype=float)
        return -np.cos(self._arg(z))[..., None, None] * np.outer(w, w)

    def gaussian_mean(self, z, a, u):
        aw = float(np.dot(a, self.w))
        return np.cos(self._arg(z))[..., None] * np.exp(-0.5 * aw * aw * np.asarray(u))

    @property
    def length_scale(self):
        return 1.0 / max(float(np.linalg.norm(self.w)), 1e-300)

    @property
    def sup_value(self):
        return 1.0

    @property
    def sup_grad(self):
        return float(np.linalg.norm(self.w))

    @property
    def sup_hess(self):
        return float(np.dot(self.w, self.w))

    def sup_dir4(self, a):
        return float(np.dot(a, self.w)) ** 4


@dataclass(frozen=True)
class GaussianBump(TestFunction):
    """``exp(-|z - center|^2 / (2 width^2))``."""

    center: tuple
    width: float = 1.0

    def _r(self, z):
        return np.asarray(z, dtype=float) - np.asarray(self.center, dtype=float)

    def value(self, z):
        r = self._r(z)
        return np.exp(-0.5 * np.sum(r * r, axis=-1) / self.width**2)

    def grad(self, z):
        r = self._r(z)
        return -(self.value(z) / self.width**2)[..., None] * r

    def hess(self, z):
        r = self._r(z)
        s2 = self.width**2
        eye = np.eye(r.shape[-1])
        return self.value(z)[..., None, None] * (r[..., :, None] * r[..., None, :] / s2**2 - eye / s2)

    def gaussian_mean(self, z, a, u):
        r = self._r(z)
        a = np.asarray(a, dtype=float)
        u = np.asarray(u, dtype=float)
        s2 = self.width**2
        aa = float(a @ a)
        ar = (r @ a)[..., None]
        rr = np.sum(r * r, axis=-1)[..., None]
        return (1.0 + u * aa / s2) ** -0.5 * np.exp(-0.5 * rr / s2 + u * ar * ar / (2.0 * s2 * (s2 + u * aa)))

    @property
    def length_scale(self):
        return self.width

    @property
    def sup_value(self):
        return 1.0

    @property
    def sup_grad(self):
        return 1.0 / (self.width * math.sqrt(math.e))

    @property
    def sup_hess(self):
        return 1.0 / self.width**2

    def sup_dir4(self, a):
        # the fourth derivative of exp(-x^2/2) peaks at 3 (at x = 0)
        return 3.0 * float(np.dot(a, a)) ** 2 / self.width**4


@dataclass(frozen=True)
class LinearFunction(TestFunction):
    """``c.z + offset``."""

    c: tuple
    offset: float = 0.0

    def value(self, z):
        return np.asarray(z, dtype=float) @ np.asarray(self.c, dtype=float) + self.offset

    def grad(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(np.asarray(self.c, dtype=float), z.shape).copy()

    def hess(self, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape + (z.shape[-1],))

    def gaussian_mean(self, z, a, u):
        return np.broadcast_to(self.value(z)[..., None], np.shape(self.value(z)) + np.shape(u)).copy()

    def sup_dir4(self, a):
        return 0.0


@dataclass(frozen=True)
class QuadraticForm(TestFunction):
    """``z^T Q z`` with symmetric ``Q``; ``Q`` = velocity projection gives ``|v|^2``."""

    Q: tuple

    def _q(self):
        q = np.asarray(self.Q, dtype=float)
        return 0.5 * (q + q.T)

    def value(self, z):
        z = np.asarray(z, dtype=float)
        return np.einsum("...i,ij,...j->...", z, self._q(), z)

    def grad(self, z):
        return 2.0 * np.asarray(z, dtype=float) @ self._q()

    def hess(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(2.0 * self._q(), z.shape + (z.shape[-1],)).copy()

    def gaussian_mean(self, z, a, u):
        a = np.asarray(a, dtype=float)
        return self.value(z)[..., None] + float(a @ self._q() @ a) * np.asarray(u)

    def sup_dir4(self, a):
        return 0.0

    @classmethod
    def velocity_square(cls, dim: int, velocity) -> "QuadraticForm":
        q = np.zeros((dim, dim))
        for i in velocity:
            q[i, i] = 1.0
        return cls(tuple(map(tuple, q)))


# ------------------------------------------------------------- outer rule


@dataclass(frozen=True)
class OuterRule:
    """Nodes and ``nu``-weights for ``int_cut^U g(u) nu(du)`` plus the pieces outside."""

    nodes: np.ndarray
    weights: np.ndarray
    cutoff: float
    tail_point: float
    tail_mass: float  # nu((U, inf)), exact or an upper bound
    small_moment: float  # int_0^cut u nu(du)
    small_moment2: float  # int_0^cut u^2 nu(du)


def outer_rule(fam, cutoff: float = SMALL_U_CUTOFF, tail_tol: float = TAIL_TOL) -> OuterRule:
    big_u = 1.0
    while fam.tail_mass(big_u) > tail_tol and big_u < MAX_TAIL_POINT:
        big_u *= 2.0
    lo, hi = math.log(cutoff), math.log(big_u)
    n_pan = max(1, int(math.ceil((hi - lo) / PANEL_WIDTH)))
    edges = np.linspace(lo, hi, n_pan + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    s = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    ws = (half[:, None] * _GL_W[None, :]).ravel()
    u = np.exp(s)
    return OuterRule(
        nodes=u,
        weights=ws * u * fam.levy_density(u),
        cutoff=cutoff,
        tail_point=big_u,
        tail_mass=float(fam.tail_mass(big_u)),
        small_moment=float(fam.truncated_moment(cutoff, 1)),
        small_moment2=float(fam.truncated_moment(cutoff, 2)),
    )


# ------------------------------------------------------------- inner rule


def _hermite_mean(f: TestFunction, z, a, u, n: int):
    x, w = hermite_e.hermegauss(n)
    w = w / math.sqrt(2.0 * math.pi)
    shift = np.sqrt(u)[:, None, None] * x[None, :, None] * np.asarray(a)[None, None, :]  # (Q, n, d)
    vals = f.value(z[:, None, None, :] + shift[None])  # (M, Q, n)
    return vals @ w


def gaussian_mean(f: TestFunction, z, a, u, method: str = "hermite"):
    """``E f(z + a sqrt(u) Z)`` for points ``z`` (``(M, d)``) and clock values ``u`` (``(Q,)``).

    ``method="hermite"`` doubles the node count from ``INNER_NODES`` until two
    rules agree and the nodes are fine enough on the scale of ``f``; entries
    still unresolved at ``INNER_MAX_NODES`` fall back to the test function's
    closed form, or raise if it has none.
    """
    if method == "closed":
        out = f.gaussian_mean(z, a, u)
        if out is None:
            raise QuadratureError(f"{type(f).__name__} has no closed-form Gaussian mean")
        return out
    if method != "hermite":
        raise ValueError(f"unknown inner method {method!r}")
    spread = np.sqrt(np.asarray(u, dtype=float)) * float(np.linalg.norm(a))

    def resolves(n):
        # central node spacing ~ pi / sqrt(n), in units of the spread
        return spread * math.pi / math.sqrt(n) <= 0.5 * f.length_scale

    n = INNER_NODES
    cur = _hermite_mean(f, z, a, u, n)
    todo = np.ones(cur.shape, dtype=bool)
    while n < INNER_MAX_NODES and todo.any():
        n *= 2
        cols = np.nonzero(todo.any(axis=0))[0]
        nxt = _hermite_mean(f, z, a, u[cols], n)
        sub = todo[:, cols]
        ok = (np.abs(nxt - cur[:, cols]) <= INNER_ATOL + INNER_RTOL * np.abs(nxt)) & resolves(n)[cols][None, :]
        block = cur[:, cols]
        block[sub] = nxt[sub]
        cur[:, cols] = block
        todo[:, cols] = sub & ~ok
    if todo.any():
        closed = f.gaussian_mean(z, a, u)
        if closed is None:
            raise QuadratureError(
                f"Hermite quadrature unresolved at {INNER_MAX_NODES} nodes for {type(f).__name__}"
            )
        cur = np.where(todo, closed, cur)
    return cur


# ---------------------------------------------------------------- generator


@dataclass
class GeneratorValue:
    value: np.ndarray
    drift_part: np.ndarray
    diffusion_part: np.ndarray
    jump_part: np.ndarray
    error_bound: float  # analytic bound for the small-u surrogate and the tail


def generator_parts(
    model: ModelSpec,
    sub_spec: SubordinatorSpec,
    f: TestFunction,
    z,
    inner: str = "hermite",
    chunk: int = 2048,
) -> GeneratorValue:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    Z = np.atleast_2d(z)
    if Z.shape[-1] != model.dim or sub_spec.dim != model.dim:
        raise ValueError("state, model and subordinator dimensions must agree")
    A = model.diffusion
    drift = np.sum(model.drift(Z) * f.grad(Z), axis=-1)
    H = f.hess(Z)
    diff = np.zeros(Z.shape[0])
    jump = np.zeros(Z.shape[0])
    bound = 0.0
    fz = f.value(Z)
    for i, (theta, fam) in enumerate(zip(sub_spec.drift, sub_spec.components)):
        a = A[:, i]
        if not np.any(a):
            continue
        quad_form = np.einsum("...jk,j,k->...", H, a, a)
        diff += 0.5 * theta * quad_form
        if isinstance(fam, ZeroFamily):
            continue
        rule = outer_rule(fam)
        part = 0.5 * quad_form * rule.small_moment - fz * rule.tail_mass
        for s in range(0, Z.shape[0], chunk):
            zs = Z[s : s + chunk]
            g = gaussian_mean(f, zs, a, rule.nodes, method=inner) - f.value(zs)[:, None]
            part[s : s + chunk] += g @ rule.weights
        jump += part
        bound += f.sup_dir4(a) / 8.0 * rule.small_moment2 + f.sup_value * rule.tail_mass
    total = drift + diff + jump
    if single:
        total, drift, diff, jump = total[0], drift[0], diff[0], jump[0]
    return GeneratorValue(total, drift, diff, jump, bound)


def generator_apply(model: ModelSpec, sub_spec: SubordinatorSpec, f: TestFunction, z, inner: str = "hermite"):
    """``(L f)(z)`` for a single state or a batch of states."""
    return generator_parts(model, sub_spec, f, z, inner=inner).value
