"""Independent reference computations used only by the tests."""
import math

import numpy as np
from scipy import integrate, linalg


def levy_laplace_quad(levy_density, alpha, z):
    """``int (1 - e^{-zu}) nu(du)`` by adaptive quadrature, singular part on [0, 1] weighted."""
    def regular(u):  # u^{1+alpha} nu(u), continuous at 0
        u = max(u, 1e-100)
        return u ** (1 + alpha) * levy_density(u)

    lo, _ = integrate.quad(lambda u: (-np.expm1(-z * u) / u if u > 0 else z) * regular(u),
                           0.0, 1.0, weight="alg", wvar=(-alpha, 0.0), epsabs=1e-13, epsrel=1e-12, limit=200)
    # tail in log variables, u = e^y, so the integrand decays like e^{-alpha y}; the cut at y = 700
    # drops a relative e^{-700 alpha} / alpha
    hi, _ = integrate.quad(lambda y: -np.expm1(-z * math.exp(y)) * levy_density(math.exp(y)) * math.exp(y),
                           0.0, 700.0, epsabs=1e-13, epsrel=1e-12, limit=400)
    return lo + hi


def central_jacobian(fun, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((fun(x + e) - fun(x - e)) / (2 * step))
    return np.stack(cols, axis=-1)


def gramian(M, A, t):
    """``int_0^t e^{sM} A A^T e^{sM^T} ds`` by adaptive vector quadrature."""
    AA = A @ A.T
    val, _ = integrate.quad_vec(lambda s: linalg.expm(s * M) @ AA @ linalg.expm(s * M).T, 0.0, t, epsabs=1e-14, epsrel=1e-12)
    return val


def linear_kinetic_matrix(d):
    M = np.zeros((2 * d, 2 * d))
    M[:d, d:] = np.eye(d)
    M[d:, :d] = -np.eye(d)
    M[d:, d:] = -np.eye(d)
    return M


def mc_se(x):
    x = np.asarray(x)
    return x.std(ddof=1) / math.sqrt(x.size)
