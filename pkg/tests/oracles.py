"""Independent reference computations for the shallow lake model.

Everything here is derived by hand from the canonical equations and uses
only numpy/scipy; none of it calls into the package.
"""

import numpy as np
from scipy.optimize import brentq, fsolve


def phi(P):
    return P**2 / (1 + P**2)


def dphi(P):
    return 2 * P / (1 + P**2) ** 2


def ddphi(P):
    return (2 - 6 * P**2) / (1 + P**2) ** 3


def steady_state_residual(P, rho, b, c):
    """Scalar equation for 0D equilibria after eliminating the costate.

    From u = bP - phi(P), lambda = -1/u and a zero costate derivative.
    """
    return 2 * c * P * (b * P - phi(P)) - (rho + b - dphi(P))


def steady_state_residual_dP(P, rho, b, c):
    return 2 * c * (b * P - phi(P)) + 2 * c * P * (b - dphi(P)) + ddphi(P)


def lake0d_equilibria(rho, b, c, grid=None):
    """Admissible 0D equilibria as ``(P, lambda)`` pairs, sorted by P."""
    grid = np.linspace(1e-4, 5.0, 20001) if grid is None else grid
    g = steady_state_residual(grid, rho, b, c)
    out = []
    for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
        P = brentq(steady_state_residual, grid[k], grid[k + 1], args=(rho, b, c), xtol=1e-15)
        u = b * P - phi(P)
        if u > 0:
            out.append((P, -1.0 / u))
    return out


def lake0d_jacobian(P, lam, rho, b, c):
    return np.array(
        [
            [-b + dphi(P), 1.0 / lam**2],
            [2 * c - lam * ddphi(P), rho + b - dphi(P)],
        ]
    )


def lake0d_fold(rho, c, parameter, guess):
    """Fold of the 0D equilibrium curve in ``parameter`` ('b' or 'c').

    Solves ``g = 0, dg/dP = 0`` for ``(P, parameter)`` from ``guess``.
    """

    def args(val):
        kw = {"rho": rho, "b": 0.0, "c": c}
        kw[parameter] = val
        if parameter == "c":
            kw["b"] = guess[2]
        return kw["rho"], kw["b"], kw["c"]

    def eqs(z):
        P, val = z
        a = args(val)
        return [steady_state_residual(P, *a), steady_state_residual_dP(P, *a)]

    P, val = fsolve(eqs, guess[:2], xtol=1e-13)
    return P, val


def fd_jacobian(f, x, h=1e-6):
    """Central finite-difference Jacobian of ``f`` at ``x``."""
    x = np.asarray(x, float)
    f0 = np.asarray(f(x))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        J[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * e[j])
    return J


def trapezoid_weights(N):
    w = np.full(N + 1, 1.0 / N)
    w[[0, -1]] *= 0.5
    return w
