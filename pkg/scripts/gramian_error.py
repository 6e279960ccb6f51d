"""Deterministic covariance of the linear kinetic model against its exact Gramian.

With the clock equal to time and no noise, the per-path matrix reduces to a
left-point Riemann sum of the Gramian integrand; this prints its relative
Frobenius error over step sizes and horizons, and the fitted order in h.
"""
import numpy as np
from scipy import integrate, linalg

from hypokinetic.levy_noise import NoisePath
from hypokinetic.malliavin import covariance_matrix
from hypokinetic.model import builtin_kinetic_model
from hypokinetic.sde_engine import integrate_path


def gramian(M, A, t):
    AA = A @ A.T
    val, _ = integrate.quad_vec(lambda s: linalg.expm(s * M) @ AA @ linalg.expm(s * M).T, 0.0, t, epsabs=1e-14, epsrel=1e-12)
    return val


def sigma(model, t, n):
    grid = np.linspace(0.0, t, n + 1)
    dS = np.zeros((n, model.dim))
    dS[:, list(model.velocity)] = np.diff(grid)[:, None]
    traj = integrate_path(model, np.zeros(model.dim), NoisePath(grid, dS, np.zeros((n, model.dim))))
    return covariance_matrix(model, traj).sigma


def main():
    m = builtin_kinetic_model("quadratic", 1)
    M = np.array([[0.0, 1.0], [-1.0, -1.0]])
    hs = np.array([4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4])
    print("t      " + "  ".join(f"h={h:.1e}" for h in hs) + "   order")
    for t in (0.1, 0.25, 0.5, 1.0):
        G = gramian(M, m.diffusion, t)
        errs = np.array([np.linalg.norm(sigma(m, t, int(round(t / h))) - G) / np.linalg.norm(G) for h in hs])
        order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        print(f"{t:<6} " + "  ".join(f"{e:.3e}" for e in errs) + f"   {order:.3f}")


if __name__ == "__main__":
    main()
