"""Canonical systems of the shallow lake model.

Both the non-distributed lake and its finite-difference discretization on
``N + 1`` nodes are exposed through :class:`CanonicalModel`.  A canonical
point is a flat array ``X = (P_0, ..., P_{n-1}, lambda_0, ..., lambda_{n-1})``;
every method also accepts a stack of points with shape ``(..., 2n)``.

The discretized objective weights the node payoffs with the trapezoid
weights ``(1/2, 1, ..., 1, 1/2)`` (not divided by ``N``).  With these node
weights ``w`` the maximizing control is ``u_i = -w_i / lambda_i`` and the
costate equation carries ``2 c w_i P_i``, which gives the boundary halving
of both quantities.  Costates at an equilibrium are negative.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import AdmissibilityError, DimensionError, SingularControlError

__all__ = [
    "ModelParams",
    "DiffusionOperators",
    "CanonicalModel",
    "ShallowLake0D",
    "ShallowLake1D",
    "make_model",
    "SCENARIO_I",
    "SCENARIO_II",
    "DEFAULT_L",
]

DEFAULT_L = 2.0 * math.pi / 0.44
PARAMETER_NAMES = ("rho", "b", "c", "D", "L")


@dataclass(frozen=True)
class ModelParams:
    """Economic and spatial parameters.

    ``N`` is ``None`` for the non-distributed model.
    """

    rho: float
    b: float
    c: float
    D: float = 0.5
    L: float = DEFAULT_L
    N: int | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.c < 0:
            raise ValueError(f"c must be non-negative, got {self.c}")
        if self.D < 0:
            raise ValueError(f"D must be non-negative, got {self.D}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.N is not None:
            if int(self.N) != self.N or self.N < 1:
                raise ValueError(f"N must be an integer >= 1, got {self.N}")
            object.__setattr__(self, "N", int(self.N))

    @property
    def spatial(self) -> bool:
        return self.N is not None

    @property
    def h(self) -> float:
        if self.N is None:
            raise AttributeError("grid spacing undefined for the 0D model")
        return 1.0 / self.N

    @property
    def Dtilde(self) -> float:
        """Diffusion coefficient scaled to the unit grid, ``D N^2 / (2L)^2``."""
        if self.N is None:
            return 0.0
        return self.D * self.N**2 / (2.0 * self.L) ** 2

    def replace(self, **changes) -> ModelParams:
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


SCENARIO_I = ModelParams(rho=0.03, b=0.65, c=0.5)
SCENARIO_II = ModelParams(rho=0.3, b=0.55, c=3.5)


@dataclass(frozen=True)
class DiffusionOperators:
    """Neumann (ghost node) second-difference operators on ``N + 1`` nodes.

    ``A_state`` multiplied by ``Dtilde`` gives the state diffusion terms and
    ``A_costate`` (its transpose) the costate ones.  ``w`` are normalized
    trapezoid weights summing to one.
    """

    A_state: np.ndarray
    A_costate: np.ndarray
    w: np.ndarray

    @classmethod
    def build(cls, N: int) -> DiffusionOperators:
        if N < 2:
            raise ValueError("the discretized model needs N >= 2")
        n = N + 1
        A = np.zeros((n, n), dtype=np.int64)
        idx = np.arange(1, N)
        A[idx, idx - 1] = 1
        A[idx, idx] = -2
        A[idx, idx + 1] = 1
        A[0, 0], A[0, 1] = -2, 2
        A[N, N], A[N, N - 1] = -2, 2
        w = np.full(n, 1.0 / N)
        w[[0, N]] *= 0.5
        A.setflags(write=False)
        At = A.T.copy()
        At.setflags(write=False)
        w.setflags(write=False)
        return cls(A, At, w)


def _phi(P):
    P2 = P * P
    return P2 / (1.0 + P2)


def _dphi(P):
    q = 1.0 + P * P
    return 2.0 * P / (q * q)


def _ddphi(P):
    P2 = P * P
    q = 1.0 + P2
    return (2.0 - 6.0 * P2) / (q * q * q)


class CanonicalModel:
    """Interface shared by every canonical system.

    Subclasses set ``n`` (number of states), ``params``, ``weights`` (payoff
    weight per node) and implement the model specific terms.
    """

    n: int
    params: ModelParams
    weights: np.ndarray
    name = "abstract"

    @property
    def dim(self) -> int:
        return 2 * self.n

    # -- helpers -----------------------------------------------------------
    def _split(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise DimensionError(
                f"canonical point must have length {self.dim}, got {X.shape[-1]}"
            )
        return X[..., : self.n], X[..., self.n :]

    def states(self, X):
        return self._split(X)[0]

    def costates(self, X):
        return self._split(X)[1]

    def point(self, states, costates):
        return np.concatenate([np.asarray(states, float), np.asarray(costates, float)], axis=-1)

    def is_admissible(self, X) -> bool | np.ndarray:
        P, lam = self._split(X)
        return np.logical_and(np.all(P > 0, axis=-1), np.all(lam < 0, axis=-1))

    def check_admissible(self, X):
        P, lam = self._split(X)
        bad = np.flatnonzero(np.atleast_1d(np.any(lam >= 0, axis=tuple(range(lam.ndim - 1)))))
        if bad.size:
            raise AdmissibilityError(f"costate not negative at node {bad[0]}")
        bad = np.flatnonzero(np.atleast_1d(np.any(P <= 0, axis=tuple(range(P.ndim - 1)))))
        if bad.size:
            raise AdmissibilityError(f"state not positive at node {bad[0]}")

    def with_params(self, **changes) -> CanonicalModel:
        return type(self)(self.params.replace(**changes))

    def objective_value(self, X):
        """Objective value of a path converging to an equilibrium, ``H(X(0)) / rho``."""
        return self.hamiltonian(X) / self.params.rho

    def flat_spread(self, X):
        P = self.states(X)
        return np.ptp(P, axis=-1)

    # -- to be provided ----------------------------------------------------
    def control(self, X):
        raise NotImplementedError

    def rhs(self, X, check=True):
        raise NotImplementedError

    def jacobian(self, X):
        raise NotImplementedError

    def hamiltonian(self, X):
        raise NotImplementedError

    def spatial_norm(self, y):
        raise NotImplementedError


class _ShallowLakeBase(CanonicalModel):
    """Node-wise shallow lake terms with arbitrary payoff weights.

    The 0D model is the one-node case with weight one and no diffusion.
    """

    def __init__(self, params: ModelParams):
        self.params = params

    # diffusion hooks, trivial without space
    def _diffuse_state(self, P):
        return 0.0

    def _diffuse_costate(self, lam):
        return 0.0

    def _require_costates(self, lam):
        zero = lam == 0
        if np.any(zero):
            node = int(np.argwhere(zero)[0][-1])
            raise SingularControlError(node)

    def control(self, X):
        """Hamiltonian maximizing control ``u_i = -w_i / lambda_i``."""
        _, lam = self._split(X)
        self._require_costates(lam)
        return -self.weights / lam

    def rhs(self, X, check=True):
        """Velocity ``(dP/dt, dlambda/dt)`` of the canonical system."""
        P, lam = self._split(X)
        if check:
            self.check_admissible(X)
        self._require_costates(lam)
        p = self.params
        w = self.weights
        dP = -w / lam - p.b * P + _phi(P) + self._diffuse_state(P)
        dlam = (
            2.0 * p.c * w * P
            + lam * (p.rho + p.b - _dphi(P))
            - self._diffuse_costate(lam)
        )
        return np.concatenate([dP, dlam], axis=-1)

    def _local_jacobian(self, P, lam):
        p = self.params
        w = self.weights
        dphi = _dphi(P)
        return (
            dphi - p.b,
            w / (lam * lam),
            2.0 * p.c * w - lam * _ddphi(P),
            p.rho + p.b - dphi,
        )

    def hamiltonian(self, X, check=True):
        """Maximized Hamiltonian ``sum_i w_i (ln u_i - c P_i^2) + lambda . dP/dt``."""
        P, lam = self._split(X)
        if check:
            self.check_admissible(X)
        u = self.control(X)
        dP = self.rhs(X, check=False)[..., : self.n]
        g = self.weights * (np.log(u) - self.params.c * P * P)
        return np.sum(g, axis=-1) + np.sum(lam * dP, axis=-1)

    def hamiltonian_gradient(self, X):
        """Gradient of :meth:`hamiltonian` with respect to ``X``."""
        P, lam = self._split(X)
        F = self.rhs(X, check=False)
        dH_dP = self.params.rho * lam - F[..., self.n :]
        return np.concatenate([dH_dP, F[..., : self.n]], axis=-1)

    def running_payoff(self, X):
        """Weighted payoff ``sum_i w_i g(P_i, u_i)`` at the maximizing control."""
        P, _ = self._split(X)
        u = self.control(X)
        return np.sum(self.weights * (np.log(u) - self.params.c * P * P), axis=-1)

    def param_derivative(self, X, name):
        """Partial derivative of :meth:`rhs` with respect to a model parameter."""
        P, lam = self._split(X)
        w = self.weights
        zero = np.zeros_like(P)
        if name == "b":
            return np.concatenate([-P, lam], axis=-1)
        if name == "c":
            return np.concatenate([zero, 2.0 * w * P], axis=-1)
        if name == "rho":
            return np.concatenate([zero, lam], axis=-1)
        if name == "D":
            if not self.params.spatial:
                return np.concatenate([zero, zero], axis=-1)
            k = self.params.N**2 / (2.0 * self.params.L) ** 2
            return np.concatenate([k * self._A_apply(P), -k * self._At_apply(lam)], axis=-1)
        raise KeyError(f"unknown parameter {name!r}")


class ShallowLake0D(_ShallowLakeBase):
    """Non-distributed shallow lake, one state ``P`` and one costate."""

    name = "lake0d"
    n = 1

    def __init__(self, params: ModelParams):
        if params.N is not None:
            params = params.replace(N=None)
        super().__init__(params)
        self.weights = np.ones(1)

    def jacobian(self, X):
        P, lam = self._split(X)
        a, b, c, d = self._local_jacobian(P[..., 0], lam[..., 0])
        J = np.empty(np.shape(P)[:-1] + (2, 2))
        J[..., 0, 0] = a
        J[..., 0, 1] = b
        J[..., 1, 0] = c
        J[..., 1, 1] = d
        return J

    @cached_property
    def jac_sparsity(self):
        return np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])

    def jac_values(self, X):
        P, lam = self._split(X)
        a, b, c, d = self._local_jacobian(P[..., 0], lam[..., 0])
        return np.stack([a, b, c, d], axis=-1)

    def spatial_norm(self, y):
        y = np.asarray(y, float)
        if y.shape[-1] != 1:
            raise DimensionError(f"expected a vector of length 1, got {y.shape[-1]}")
        return np.abs(y[..., 0])


class ShallowLake1D(_ShallowLakeBase):
    """Finite-difference discretization on ``N + 1`` equidistant nodes."""

    name = "lake1d"

    def __init__(self, params: ModelParams):
        if params.N is None:
            raise ValueError("the spatial model requires N")
        super().__init__(params)
        self.n = params.N + 1
        self.ops = DiffusionOperators.build(params.N)
        self.weights = self.ops.w * params.N
        self._A = sp.csr_matrix(self.ops.A_state.astype(float))
        self._At = sp.csr_matrix(self.ops.A_costate.astype(float))

    def _A_apply(self, P):
        return (self._A @ np.reshape(P, (-1, self.n)).T).T.reshape(np.shape(P))

    def _At_apply(self, lam):
        return (self._At @ np.reshape(lam, (-1, self.n)).T).T.reshape(np.shape(lam))

    def _diffuse_state(self, P):
        return self.params.Dtilde * self._A_apply(P)

    def _diffuse_costate(self, lam):
        return self.params.Dtilde * self._At_apply(lam)

    @cached_property
    def jac_sparsity(self):
        """Row and column indices of the structurally nonzero Jacobian entries.

        The first ``4n`` entries are the node-local 2x2 blocks (diagonal
        diffusion included), the rest the off-diagonal diffusion couplings.
        """
        n = self.n
        i = np.arange(n)
        A = self.ops.A_state
        r, c = np.nonzero(A)
        off = r != c
        r, c = r[off], c[off]
        rows = np.concatenate([i, i, n + i, n + i, r, n + c])
        cols = np.concatenate([i, n + i, i, n + i, c, n + r])
        return rows, cols

    @cached_property
    def _jac_constant(self):
        A = self.ops.A_state
        r, c = np.nonzero(A)
        off = r != c
        Dt = self.params.Dtilde
        vals = A[r[off], c[off]].astype(float) * Dt
        return np.concatenate([vals, -vals]), Dt * np.diag(A).astype(float)

    def jac_values(self, X):
        P, lam = self._split(X)
        a, b, c, d = self._local_jacobian(P, lam)
        offdiag, diag = self._jac_constant
        lead = np.shape(P)[:-1]
        const = np.broadcast_to(offdiag, lead + offdiag.shape)
        return np.concatenate([a + diag, b, c, d - diag, const], axis=-1)

    def jacobian(self, X):
        """Dense Jacobian of :meth:`rhs`."""
        X = np.asarray(X, float)
        vals = self.jac_values(X)
        rows, cols = self.jac_sparsity
        J = np.zeros(X.shape[:-1] + (self.dim, self.dim))
        J[..., rows, cols] = vals
        return J

    def spatial_norm(self, y):
        """Trapezoid weighted mean of absolute node values."""
        y = np.asarray(y, float)
        if y.shape[-1] != self.n:
            raise DimensionError(f"expected a vector of length {self.n}, got {y.shape[-1]}")
        return np.abs(y) @ self.ops.w


def make_model(params: ModelParams) -> CanonicalModel:
    """Return the 1D model when ``params.N`` is set, else the 0D model."""
    if params.N is None:
        return ShallowLake0D(params)
    return ShallowLake1D(params)
