"""Eigenstructure of canonical equilibria.

Invariant subspaces come from a real Schur form reordered so that the
stable block leads; the remaining Schur vectors span the orthogonal
complement used in the asymptotic boundary condition.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import linear_sum_assignment

from .errors import DimensionError, NumericalError, SpecificationError

log = logging.getLogger(__name__)

__all__ = [
    "SpectralData",
    "classify",
    "check_rho_symmetry",
    "spp_two_ways",
    "asymptotic_bc_matrix",
    "truncation_time",
    "SppAmbiguityWarning",
]

CENTER_TOL = 1e-8


class SppAmbiguityWarning(UserWarning):
    """An eigenvalue sits on the boundary of the saddle point criterion."""


@dataclass(frozen=True)
class SpectralData:
    eigenvalues: np.ndarray
    n_s: int
    n_u: int
    n_c: int
    stable_basis: np.ndarray
    unstable_complement: np.ndarray

    @property
    def n(self) -> int:
        return len(self.eigenvalues) // 2

    @property
    def spp(self) -> bool:
        return self.n_s == self.n

    @property
    def defect(self) -> int:
        """Stable dimension minus number of states."""
        return self.n_s - self.n

    @property
    def defect_alt(self) -> int:
        """``n_s - n_u - n_c``, reported alongside :attr:`defect` in diagnostics."""
        return self.n_s - self.n_u - self.n_c

    @property
    def hyperbolic(self) -> bool:
        return self.n_c == 0

    def stable_eigenvalues(self):
        return self.eigenvalues[self.eigenvalues.real < 0]


def classify(jacobian, rho: float | None = None, center_tol: float = CENTER_TOL) -> SpectralData:
    """Split the spectrum into stable, unstable and center parts.

    Parameters
    ----------
    jacobian : (2n, 2n) array
    rho : float, optional
        Unused by the counting itself; accepted so callers can pass the
        discount rate uniformly with :func:`check_rho_symmetry`.
    center_tol : float
        Eigenvalues with ``|Re| < center_tol`` count as center directions.

    Returns
    -------
    SpectralData
    """
    J = np.asarray(jacobian, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] % 2:
        raise DimensionError(f"need a square matrix of even size, got {J.shape}")
    if not np.all(np.isfinite(J)):
        raise NumericalError("jacobian contains non-finite entries")
    try:
        T, Z, sdim = la.schur(J, output="real", sort=lambda re, im: re < -center_tol)
    except (la.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(J)
        raise NumericalError(f"Schur decomposition failed (cond={cond:.3e}): {exc}") from exc
    ev = _schur_eigenvalues(T)
    re = ev.real
    n_s = int(np.sum(re < -center_tol))
    n_u = int(np.sum(re > center_tol))
    n_c = J.shape[0] - n_s - n_u
    if n_s != sdim:
        raise NumericalError(
            f"reordered Schur form has {sdim} stable eigenvalues, spectrum counts {n_s}"
        )
    order = np.lexsort((ev.imag, ev.real))
    return SpectralData(
        eigenvalues=ev[order],
        n_s=n_s,
        n_u=n_u,
        n_c=n_c,
        stable_basis=Z[:, :n_s].copy(),
        unstable_complement=Z[:, n_s:].copy(),
    )


def _schur_eigenvalues(T):
    n = T.shape[0]
    ev = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            ev[i : i + 2] = la.eigvals(T[i : i + 2, i : i + 2])
            i += 2
        else:
            ev[i] = T[i, i]
            i += 1
    return ev


def check_rho_symmetry(jacobian, rho: float, tol: float = 1e-8):
    """Check that eigenvalues pair up as ``rho/2 +- nu``.

    Returns ``(ok, max_error)`` where the error is the largest
    ``|mu_i + mu_j|`` over an optimal pairing of the shifted spectrum
    ``mu = eig - rho/2``, relative to ``max(1, |mu|)``.
    """
    J = np.asarray(jacobian, float)
    mu = la.eigvals(J) - rho / 2.0
    cost = np.abs(mu[:, None] + mu[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = max(1.0, float(np.max(np.abs(mu))))
    err = float(np.max(cost[rows, cols])) / scale
    return err < tol, err


def spp_two_ways(spectral: SpectralData, rho: float, band: float = 1e-9):
    """Evaluate the saddle point property by counting and by the inequality test.

    Returns a dict with both verdicts, their agreement and the eigenvalues
    closest to the inequality boundary.  Eigenvalues within ``band`` of the
    boundary trigger :class:`SppAmbiguityWarning`.
    """
    dist = np.abs(spectral.eigenvalues.real - rho / 2.0) - rho / 2.0
    by_inequality = bool(np.all(dist > 0))
    by_count = spectral.spp
    flagged = spectral.eigenvalues[dist <= 0]
    near = np.abs(dist) <= band
    if np.any(near):
        warnings.warn(
            f"{int(near.sum())} eigenvalue(s) within {band:g} of the SPP boundary",
            SppAmbiguityWarning,
            stacklevel=2,
        )
    return {
        "by_count": by_count,
        "by_inequality": by_inequality,
        "agree": by_count == by_inequality,
        "flagged": flagged,
        "min_margin": float(dist.min()),
    }


def asymptotic_bc_matrix(spectral: SpectralData) -> np.ndarray:
    """Orthonormal basis ``F`` of the complement of the stable subspace."""
    if spectral.n_s == 0:
        raise SpecificationError("equilibrium has no stable subspace")
    return spectral.unstable_complement


def truncation_time(spectral: SpectralData, T0: float = 10.0) -> float:
    """Horizon ``T0 / min |Re|`` over the stable eigenvalues."""
    stable = spectral.stable_eigenvalues()
    if stable.size == 0:
        raise SpecificationError("equilibrium has no stable eigenvalues")
    slowest = float(np.min(np.abs(stable.real)))
    if slowest < 1e-12:
        raise NumericalError(f"stable eigenvalue too close to the imaginary axis ({slowest:.3e})")
    return T0 / slowest
