"""Collocation for two-point boundary value problems on ``[0, 1]``.

The scheme is three-stage Lobatto IIIA (Hermite-Simpson): on every mesh
interval the solution is a cubic matching the node values, the node
derivatives and the derivative at the midpoint.  Unknowns are the node
values, the midpoint values and a vector of free scalar parameters.

The sparse Newton matrix is assembled in COO form from a per-point
Jacobian pattern and factored with SuperLU.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, NonConvergenceError, NumericalError

log = logging.getLogger(__name__)

__all__ = [
    "BvpProblem",
    "MeshSolution",
    "BvpOptions",
    "Discretization",
    "SingularLinearizationError",
    "solve",
    "tangent_solve",
    "estimate_residual",
    "constant_solution",
    "refine_mesh",
]


class SingularLinearizationError(NumericalError):
    """The linearized collocation system is singular (fold of a continuation)."""


@dataclass
class BvpProblem:
    """``y' = fun(t, y, p)`` on ``[0, 1]`` with ``bc(y(0), y(1), p) = 0``.

    Parameters
    ----------
    dim : int
        Length of ``y``.
    n_free : int
        Number of free scalar parameters ``p``.
    fun : callable
        ``fun(t, Y, p) -> (K, dim)`` for ``t`` of shape ``(K,)`` and ``Y`` of
        shape ``(K, dim)``.
    bc : callable
        ``bc(ya, yb, p) -> (n_bc,)``.  A determined problem has
        ``n_bc = dim + n_free``; one equation less leaves a one-parameter
        family for continuation.
    jac : callable, optional
        ``jac(t, Y, p)``.  Returns ``(K, nnz)`` values matching
        ``jac_pattern`` or, without a pattern, dense ``(K, dim, dim)``.
        Forward differences are used when omitted.
    jac_pattern : (rows, cols), optional
    fun_p : callable, optional
        ``fun_p(t, Y, p) -> (K, dim, n_free)``.
    bc_jac : callable, optional
        ``bc_jac(ya, yb, p) -> (Ba, Bb, Bp)``.
    """

    dim: int
    n_free: int
    fun: Callable
    bc: Callable
    jac: Callable | None = None
    jac_pattern: tuple | None = None
    fun_p: Callable | None = None
    bc_jac: Callable | None = None
    n_bc: int | None = None

    def __post_init__(self):
        if self.n_bc is None:
            ya = np.zeros(self.dim)
            # probing at zero may hit singular model terms; the caller can pass n_bc
            with np.errstate(all="ignore"):
                self.n_bc = len(np.atleast_1d(self.bc(ya, ya, np.zeros(self.n_free))))

    @property
    def deficiency(self) -> int:
        """Number of missing equations (0: determined, 1: one-parameter family)."""
        return self.dim + self.n_free - self.n_bc


@dataclass
class MeshSolution:
    """Discrete solution: node values, midpoint values and free parameters."""

    mesh: np.ndarray
    y: np.ndarray
    ymid: np.ndarray
    p: np.ndarray
    yp: np.ndarray | None = None
    residual_estimate: np.ndarray | None = None
    T: float = float("nan")

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, float)
        if self.mesh.ndim != 1 or len(self.mesh) < 2 or np.any(np.diff(self.mesh) <= 0):
            raise ValueError("mesh must be strictly increasing with at least two nodes")
        M = len(self.mesh) - 1
        if self.y.shape[0] != M + 1 or self.ymid.shape[0] != M:
            raise DimensionError("node/midpoint arrays do not match the mesh")
        self.p = np.atleast_1d(np.asarray(self.p, float))

    @property
    def n_intervals(self) -> int:
        return len(self.mesh) - 1

    @property
    def dim(self) -> int:
        return self.y.shape[1]

    @property
    def initial(self):
        return self.y[0]

    @property
    def final(self):
        return self.y[-1]

    def __call__(self, t):
        """Evaluate the piecewise cubic at ``t`` (requires ``yp``)."""
        return _hermite_eval(self, np.asarray(t, float))

    def pack(self) -> np.ndarray:
        M = self.n_intervals
        d = self.dim
        z = np.empty((2 * M + 1) * d + len(self.p))
        blocks = z[: (2 * M + 1) * d].reshape(2 * M + 1, d)
        blocks[0::2] = self.y
        blocks[1::2] = self.ymid
        z[(2 * M + 1) * d :] = self.p
        return z


def constant_solution(y0, p, n_intervals: int = 20, T: float = float("nan")) -> MeshSolution:
    """Uniform mesh carrying the constant function ``y0``."""
    y0 = np.asarray(y0, float)
    mesh = np.linspace(0.0, 1.0, n_intervals + 1)
    return MeshSolution(
        mesh=mesh,
        y=np.tile(y0, (n_intervals + 1, 1)),
        ymid=np.tile(y0, (n_intervals, 1)),
        p=np.atleast_1d(np.asarray(p, float)),
        yp=np.zeros((n_intervals + 1, len(y0))),
        T=T,
    )


def _hermite_eval(sol: MeshSolution, t):
    if sol.yp is None:
        raise ValueError("solution carries no node derivatives")
    t = np.atleast_1d(t)
    m = sol.mesh
    i = np.clip(np.searchsorted(m, t, side="right") - 1, 0, len(m) - 2)
    h = (m[i + 1] - m[i])[:, None]
    s = ((t - m[i]) / h[:, 0])[:, None]
    y0, y1 = sol.y[i], sol.y[i + 1]
    f0, f1 = sol.yp[i], sol.yp[i + 1]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _hermite_deriv(y0, y1, f0, f1, h, s):
    d00 = (6 * s**2 - 6 * s) / h
    d10 = 3 * s**2 - 4 * s + 1
    d01 = (-6 * s**2 + 6 * s) / h
    d11 = 3 * s**2 - 2 * s
    return d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1


@dataclass
class BvpOptions:
    abstol: float = 1e-4
    reltol: float = 1e-3
    newton_tol: float = 1e-8
    max_newton: int = 20
    max_intervals: int = 4000
    max_refinements: int = 12


class Discretization:
    """Collocation equations of a problem on a fixed mesh.

    The unknown vector is ``z = (y_0, ymid_0, y_1, ..., ymid_{M-1}, y_M, p)``
    and the equations are ordered as boundary conditions followed by the
    midpoint and Simpson equations of each interval.
    """

    def __init__(self, problem: BvpProblem, mesh):
        self.problem = problem
        self.mesh = np.asarray(mesh, float)
        self.M = len(self.mesh) - 1
        self.h = np.diff(self.mesh)
        self.tmid = self.mesh[:-1] + 0.5 * self.h
        d = problem.dim
        self.d = d
        self.n_y = (2 * self.M + 1) * d
        self.size = self.n_y + problem.n_free
        self.n_eq = problem.n_bc + 2 * self.M * d
        if problem.jac_pattern is not None:
            pr, pc = problem.jac_pattern
        else:
            pr, pc = np.nonzero(np.ones((d, d), bool))
        self._pr = np.asarray(pr)
        self._pc = np.asarray(pc)

    # -- packing -----------------------------------------------------------
    def unpack(self, z):
        d, M = self.d, self.M
        blocks = z[: self.n_y].reshape(2 * M + 1, d)
        return blocks[0::2], blocks[1::2], z[self.n_y :]

    def solution(self, z, T=float("nan")) -> MeshSolution:
        y, ymid, p = self.unpack(z)
        yp = self.problem.fun(self.mesh, y, p)
        return MeshSolution(self.mesh.copy(), y.copy(), ymid.copy(), p.copy(), yp=yp, T=T)

    def inner_weights(self):
        """Weights ``w`` with ``sum(w * z1 * z2)`` the Simpson inner product plus ``p1 . p2``."""
        d, M = self.d, self.M
        wn = np.zeros(M + 1)
        wn[:-1] += self.h / 6
        wn[1:] += self.h / 6
        wm = 4 * self.h / 6
        w = np.empty((2 * M + 1, d))
        w[0::2] = wn[:, None]
        w[1::2] = wm[:, None]
        return np.concatenate([w.ravel(), np.ones(self.problem.n_free)])

    # -- derivatives via callbacks or differences ---------------------------
    def _jac_values(self, t, Y, p):
        pb = self.problem
        if pb.jac is not None:
            v = np.asarray(pb.jac(t, Y, p), float)
            if pb.jac_pattern is None:
                v = v[:, self._pr, self._pc]
            return v
        f0 = pb.fun(t, Y, p)
        J = np.empty((len(t), self.d, self.d))
        for j in range(self.d):
            e = 1e-7 * max(1.0, float(np.max(np.abs(Y[:, j]))))
            Yj = Y.copy()
            Yj[:, j] += e
            J[:, :, j] = (pb.fun(t, Yj, p) - f0) / e
        return J[:, self._pr, self._pc]

    def _fun_p(self, t, Y, p):
        pb = self.problem
        if pb.n_free == 0:
            return np.zeros((len(t), self.d, 0))
        if pb.fun_p is not None:
            return np.asarray(pb.fun_p(t, Y, p), float).reshape(len(t), self.d, pb.n_free)
        f0 = pb.fun(t, Y, p)
        out = np.empty((len(t), self.d, pb.n_free))
        for j in range(pb.n_free):
            e = 1e-7 * max(1.0, abs(p[j]))
            pj = p.copy()
            pj[j] += e
            out[:, :, j] = (pb.fun(t, Y, pj) - f0) / e
        return out

    def _bc_jac(self, ya, yb, p):
        pb = self.problem
        if pb.bc_jac is not None:
            Ba, Bb, Bp = pb.bc_jac(ya, yb, p)
            return (
                np.asarray(Ba, float).reshape(pb.n_bc, self.d),
                np.asarray(Bb, float).reshape(pb.n_bc, self.d),
                np.asarray(Bp, float).reshape(pb.n_bc, pb.n_free),
            )
        r0 = np.asarray(pb.bc(ya, yb, p), float)
        Ba = np.empty((pb.n_bc, self.d))
        Bb = np.empty((pb.n_bc, self.d))
        Bp = np.empty((pb.n_bc, pb.n_free))
        for j in range(self.d):
            e = 1e-7 * max(1.0, abs(ya[j]))
            y = ya.copy()
            y[j] += e
            Ba[:, j] = (pb.bc(y, yb, p) - r0) / e
            e = 1e-7 * max(1.0, abs(yb[j]))
            y = yb.copy()
            y[j] += e
            Bb[:, j] = (pb.bc(ya, y, p) - r0) / e
        for j in range(pb.n_free):
            e = 1e-7 * max(1.0, abs(p[j]))
            q = p.copy()
            q[j] += e
            Bp[:, j] = (pb.bc(ya, yb, q) - r0) / e
        return Ba, Bb, Bp

    # -- residual and Jacobian --------------------------------------------
    def residual(self, z):
        pb = self.problem
        y, ymid, p = self.unpack(z)
        f = pb.fun(self.mesh, y, p)
        fm = pb.fun(self.tmid, ymid, p)
        h = self.h[:, None]
        r1 = ymid - 0.5 * (y[:-1] + y[1:]) - h / 8 * (f[:-1] - f[1:])
        r2 = y[1:] - y[:-1] - h / 6 * (f[:-1] + 4 * fm + f[1:])
        rb = np.atleast_1d(np.asarray(pb.bc(y[0], y[-1], p), float))
        col = np.stack([r1, r2], axis=1).ravel()
        return np.concatenate([rb, col])

    def jacobian(self, z):
        pb = self.problem
        d, M = self.d, self.M
        y, ymid, p = self.unpack(z)
        Jn = self._jac_values(self.mesh, y, p)
        Jm = self._jac_values(self.tmid, ymid, p)
        Fn = self._fun_p(self.mesh, y, p)
        Fm = self._fun_p(self.tmid, ymid, p)
        nb = pb.n_bc
        iv = np.arange(M)
        r1 = nb + 2 * d * iv  # first row of the midpoint equations
        r2 = r1 + d
        cn = 2 * d * iv  # column of y_i
        cm = cn + d  # column of ymid_i
        cn1 = cn + 2 * d  # column of y_{i+1}
        h = self.h
        rows, cols, vals = [], [], []
        pr, pc = self._pr, self._pc
        ar = np.arange(d)

        def jblock(r0, c0, coef, J):
            rows.append((r0[:, None] + pr[None, :]).ravel())
            cols.append((c0[:, None] + pc[None, :]).ravel())
            vals.append((coef[:, None] * J).ravel())

        def iblock(r0, c0, coef):
            rows.append((r0[:, None] + ar[None, :]).ravel())
            cols.append((c0[:, None] + ar[None, :]).ravel())
            vals.append(np.repeat(coef, d))

        one = np.ones(M)
        # midpoint equation
        iblock(r1, cm, one)
        iblock(r1, cn, -0.5 * one)
        iblock(r1, cn1, -0.5 * one)
        jblock(r1, cn, -h / 8, Jn[:-1])
        jblock(r1, cn1, h / 8, Jn[1:])
        # Simpson equation
        iblock(r2, cn1, one)
        iblock(r2, cn, -one)
        jblock(r2, cn, -h / 6, Jn[:-1])
        jblock(r2, cm, -4 * h / 6, Jm)
        jblock(r2, cn1, -h / 6, Jn[1:])
        if pb.n_free:
            cp = self.n_y + np.arange(pb.n_free)
            G1 = -(h[:, None, None] / 8) * (Fn[:-1] - Fn[1:])
            G2 = -(h[:, None, None] / 6) * (Fn[:-1] + 4 * Fm + Fn[1:])
            for r0, G in ((r1, G1), (r2, G2)):
                rr = r0[:, None, None] + ar[None, :, None]
                cc = np.broadcast_to(cp[None, None, :], G.shape)
                rows.append(np.broadcast_to(rr, G.shape).ravel())
                cols.append(cc.ravel())
                vals.append(G.ravel())
        Ba, Bb, Bp = self._bc_jac(y[0], y[-1], p)
        for B, c0 in ((Ba, 0), (Bb, 2 * d * M), (Bp, self.n_y)):
            i, j = np.nonzero(B)
            rows.append(i)
            cols.append(j + c0)
            vals.append(B[i, j])
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_eq, self.size),
        )


def _factor(A):
    try:
        lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularLinearizationError(f"collocation matrix is singular: {exc}") from exc
    return lu


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")


def newton(disc: Discretization, z0, extra=None, tol: float = 1e-8, max_iter: int = 20):
    """Damped Newton iteration on the collocation equations.

    ``extra`` optionally supplies square-up rows: a callable
    ``extra(z) -> (C, r)`` with ``C`` of shape ``(k, size)`` and ``r`` of
    length ``k``.

    Returns ``(z, iterations, residual_norm)``.
    """
    z = np.array(z0, float)

    def full_residual(z):
        with np.errstate(all="ignore"):
            R = disc.residual(z)
        if extra is not None:
            R = np.concatenate([R, extra(z)[1]])
        return R

    R = full_residual(z)
    norm = np.max(np.abs(R)) if np.all(np.isfinite(R)) else np.inf
    if not np.isfinite(norm):
        raise NonConvergenceError("initial guess gives non-finite residual")
    for it in range(1, max_iter + 1):
        if norm < tol:
            return z, it - 1, norm
        A = disc.jacobian(z)
        if extra is not None:
            A = sp.vstack([A, sp.csr_matrix(extra(z)[0])]).tocsc()
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"Newton system is {A.shape[0]} x {A.shape[1]}")
        dz = _factor(A).solve(-R)
        lam = 1.0
        while True:
            z_new = z + lam * dz
            R_new = full_residual(z_new)
            n_new = np.max(np.abs(R_new)) if np.all(np.isfinite(R_new)) else np.inf
            if n_new < (1 - 0.25 * lam) * norm or (n_new < tol):
                break
            lam *= 0.5
            if lam < 1.0 / 64:
                # accept a full step when the residual is already tiny (roundoff floor)
                if norm < 100 * tol and np.isfinite(n_new) and n_new < 10 * norm:
                    break
                raise NonConvergenceError("damped Newton step failed", norm)
        z, R, norm = z_new, R_new, n_new
    if norm < tol:
        return z, max_iter, norm
    raise NonConvergenceError(f"no convergence in {max_iter} Newton iterations", norm)


def estimate_residual(problem: BvpProblem, solution: MeshSolution, samples=(0.25, 0.75)):
    """Scaled defect of the piecewise cubic per interval.

    For every interval the derivative of the Hermite cubic is compared with
    ``fun`` at off-collocation sample points; the estimate is
    ``h * max |S' - f(S)|`` (max over samples and components).  The same
    quantity normalized by ``1 + |S|`` is used for the relative test in
    :func:`solve`.

    Returns
    -------
    ndarray, shape (M,)
    """
    m = solution.mesh
    h = np.diff(m)
    y, p = solution.y, solution.p
    f = problem.fun(m, y, p)
    est = np.zeros(len(h))
    for s in samples:
        t = m[:-1] + s * h
        hh = h[:, None]
        S = (
            (2 * s**3 - 3 * s**2 + 1) * y[:-1]
            + (s**3 - 2 * s**2 + s) * hh * f[:-1]
            + (-2 * s**3 + 3 * s**2) * y[1:]
            + (s**3 - s**2) * hh * f[1:]
        )
        dS = _hermite_deriv(y[:-1], y[1:], f[:-1], f[1:], hh, s)
        with np.errstate(all="ignore"):
            r = np.abs(dS - problem.fun(t, S, p))
        est = np.maximum(est, h * np.max(r, axis=1))
    return est


def _tolerance_ratio(problem, solution, opts: BvpOptions):
    est = estimate_residual(problem, solution)
    scale = np.maximum(np.max(np.abs(solution.y[:-1]), axis=1), np.max(np.abs(solution.y[1:]), axis=1))
    return est, est / (opts.abstol + opts.reltol * scale)


def refine_mesh(mesh, ratio, order: int = 4):
    """Split intervals whose tolerance ratio exceeds one.

    An interval with ratio ``r > 1`` is divided into ``ceil(r**(1/order))``
    pieces (at least two, at most four).
    """
    mesh = np.asarray(mesh, float)
    pieces = []
    for i, r in enumerate(ratio):
        k = 1
        if r > 1:
            k = int(np.clip(np.ceil(1.2 * r ** (1.0 / order)), 2, 4))
        pieces.append(np.linspace(mesh[i], mesh[i + 1], k + 1)[:-1])
    pieces.append(mesh[-1:])
    return np.concatenate(pieces)


def remesh(problem: BvpProblem, solution: MeshSolution, new_mesh) -> MeshSolution:
    """Interpolate a solution onto another mesh with its piecewise cubic."""
    sol = solution
    if sol.yp is None:
        sol = replace(sol, yp=problem.fun(sol.mesh, sol.y, sol.p))
    new_mesh = np.asarray(new_mesh, float)
    tmid = 0.5 * (new_mesh[:-1] + new_mesh[1:])
    y = _hermite_eval(sol, new_mesh)
    ymid = _hermite_eval(sol, tmid)
    return MeshSolution(new_mesh, y, ymid, sol.p.copy(), yp=problem.fun(new_mesh, y, sol.p), T=sol.T)


def remesh_linear(solution: MeshSolution, new_mesh) -> MeshSolution:
    """Piecewise quadratic interpolation through nodes and midpoints.

    Used for tangents, which carry no derivative information.
    """
    m = solution.mesh
    new_mesh = np.asarray(new_mesh, float)
    tmid = 0.5 * (new_mesh[:-1] + new_mesh[1:])

    def ev(t):
        i = np.clip(np.searchsorted(m, t, side="right") - 1, 0, len(m) - 2)
        s = ((t - m[i]) / (m[i + 1] - m[i]))[:, None]
        l0 = 2 * (s - 0.5) * (s - 1)
        lm = -4 * s * (s - 1)
        l1 = 2 * s * (s - 0.5)
        return l0 * solution.y[i] + lm * solution.ymid[i] + l1 * solution.y[i + 1]

    return MeshSolution(new_mesh, ev(new_mesh), ev(tmid), solution.p.copy(), T=solution.T)


def solve(
    problem: BvpProblem,
    initial: MeshSolution,
    opts: BvpOptions | None = None,
    extra=None,
) -> MeshSolution:
    """Solve a determined problem with adaptive mesh refinement.

    Parameters
    ----------
    problem : BvpProblem
        Must be determined (``deficiency == 0``) unless ``extra`` supplies
        the missing rows.
    initial : MeshSolution
        Initial guess; its mesh is the starting mesh.
    extra : callable, optional
        ``extra(disc, z) -> (C, r)`` square-up rows, rebuilt per mesh.

    Returns
    -------
    MeshSolution
        Converged solution with ``residual_estimate`` filled in.

    Raises
    ------
    NonConvergenceError
        Newton failure or mesh growth beyond ``max_intervals``.
    """
    opts = opts or BvpOptions()
    if initial.n_intervals < 2:
        raise ValueError("initial mesh needs at least two intervals")
    k = 0 if extra is None else None
    if k == 0 and problem.deficiency != 0:
        raise DimensionError(
            f"problem has {problem.n_bc} boundary conditions, needs {problem.dim + problem.n_free}"
        )
    sol = initial
    for _ in range(opts.max_refinements + 1):
        disc = Discretization(problem, sol.mesh)
        ex = None if extra is None else (lambda z, disc=disc: extra(disc, z))
        z, _, _ = newton(disc, sol.pack(), ex, opts.newton_tol, opts.max_newton)
        sol = disc.solution(z, T=initial.T)
        est, ratio = _tolerance_ratio(problem, sol, opts)
        sol.residual_estimate = est
        if np.all(ratio <= 1):
            return sol
        new_mesh = refine_mesh(sol.mesh, ratio)
        if len(new_mesh) - 1 > opts.max_intervals:
            raise NonConvergenceError(
                f"mesh would exceed {opts.max_intervals} intervals", float(np.max(est))
            )
        log.debug("refining mesh %d -> %d intervals", sol.n_intervals, len(new_mesh) - 1)
        sol = remesh(problem, sol, new_mesh)
    raise NonConvergenceError("mesh refinement did not meet the tolerance", float(np.max(est)))


def tangent_solve(
    problem: BvpProblem,
    at: MeshSolution,
    direction=None,
    param_index: int = 0,
    extra=None,
) -> MeshSolution:
    """Tangent of a one-parameter solution family.

    Solves the linearized collocation system (variational equation with
    linearized boundary conditions) bordered by one normalization row and
    scales the result to unit extended norm
    ``(int |V|^2 dt + |V_p|^2)^(1/2)``.

    Parameters
    ----------
    direction : MeshSolution or ndarray, optional
        Previous tangent (same mesh) used as border and for orientation.
        Without it the border fixes ``V_p[param_index] = 1``, orienting the
        tangent toward increasing parameter.
    extra : callable, optional
        Additional linear rows ``extra(disc, z) -> (C, r)`` for problems
        with more than one missing equation.

    Raises
    ------
    SingularLinearizationError
        The bordered system is singular.
    """
    disc = Discretization(problem, at.mesh)
    z = at.pack()
    A = disc.jacobian(z)
    if extra is not None:
        C, _ = extra(disc, z)
        A = sp.vstack([A, sp.csr_matrix(C)])
    if A.shape[0] != disc.size - 1:
        raise DimensionError("tangent needs exactly one missing equation")
    w = disc.inner_weights()
    if direction is None:
        border = np.zeros(disc.size)
        border[disc.n_y + param_index] = 1.0
    else:
        v = direction.pack() if isinstance(direction, MeshSolution) else np.asarray(direction, float)
        border = w * v
    B = sp.vstack([A, sp.csr_matrix(border)]).tocsc()
    rhs = np.zeros(disc.size)
    rhs[-1] = 1.0
    v = _factor(B).solve(rhs)
    _check_finite(v, "tangent")
    v /= np.sqrt(np.sum(w * v * v))
    y, ymid, p = disc.unpack(v)
    return MeshSolution(at.mesh.copy(), y.copy(), ymid.copy(), p.copy(), T=at.T)
