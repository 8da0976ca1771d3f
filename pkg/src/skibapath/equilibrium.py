"""Canonical steady states: Newton solves, flat lifting and branch continuation."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import BranchSwitchError, NonConvergenceError
from .model import CanonicalModel, ModelParams, make_model
from .spectral import CENTER_TOL, SpectralData, classify

log = logging.getLogger(__name__)

__all__ = [
    "Equilibrium",
    "Branch",
    "BranchEvent",
    "ContinuationOptions",
    "newton_solve",
    "lift_flat",
    "equilibria_0d",
    "continue_equilibria",
    "switch_branch",
    "equilibria_at",
    "merge_equilibria",
    "bifurcation_tree",
]

FLAT_TOL = 1e-8


@dataclass(frozen=True)
class Equilibrium:
    point: np.ndarray
    params: ModelParams
    residual_norm: float
    spectral: SpectralData
    flat: bool
    admissible: bool
    iterations: int = 0

    @property
    def model(self) -> CanonicalModel:
        return make_model(self.params)

    @property
    def n(self) -> int:
        return len(self.point) // 2

    @property
    def states(self):
        return self.point[: self.n]

    @property
    def costates(self):
        return self.point[self.n :]

    @property
    def spp(self) -> bool:
        return self.spectral.spp

    @property
    def defect(self) -> int:
        return self.spectral.defect

    @property
    def mirror_symmetric(self) -> bool:
        """True when the state profile is invariant under ``z -> 1 - z``."""
        P = self.states
        return bool(np.max(np.abs(P - P[::-1])) < 1e-6)

    def mirrored(self) -> np.ndarray:
        n = self.n
        return np.concatenate([self.point[:n][::-1], self.point[n:][::-1]])

    def kind(self) -> str:
        if self.n == 1:
            ev = self.spectral.eigenvalues
            if self.spectral.n_s == 1:
                return "saddle"
            if np.any(np.abs(ev.imag) > 0):
                return "focus"
            return "node"
        shape = "flat" if self.flat else "patterned"
        return f"{shape}-{'spp' if self.spp else 'nonspp'}"


def _finish(model, X, residual, iterations, center_tol=CENTER_TOL):
    spec = classify(model.jacobian(X), model.params.rho, center_tol)
    flat = bool(np.ptp(model.states(X)) < FLAT_TOL)
    return Equilibrium(
        point=np.array(X, dtype=float),
        params=model.params,
        residual_norm=float(residual),
        spectral=spec,
        flat=flat,
        admissible=bool(model.is_admissible(X)),
        iterations=iterations,
    )


def newton_solve(
    model: CanonicalModel,
    guess,
    tol: float = 1e-12,
    max_iter: int = 100,
    max_halvings: int = 20,
    center_tol: float = CENTER_TOL,
) -> Equilibrium:
    """Damped Newton iteration for ``F(X) = 0``.

    The step is halved until the max-norm residual decreases (at most
    ``max_halvings`` times).  Returns the classified equilibrium.
    """
    X = np.array(guess, dtype=float)
    F = model.rhs(X, check=False)
    res = float(np.max(np.abs(F)))
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NonConvergenceError("equilibrium Newton did not converge", res)
        it += 1
        try:
            dX = la.solve(model.jacobian(X), -F)
        except (la.LinAlgError, ValueError) as exc:
            raise NonConvergenceError(f"singular Jacobian in Newton ({exc})", res) from exc
        step = 1.0
        for _ in range(max_halvings + 1):
            Xn = X + step * dX
            with np.errstate(all="ignore"):
                Fn = model.rhs(Xn, check=False) if np.all(model.costates(Xn) != 0) else None
            if Fn is not None and np.all(np.isfinite(Fn)):
                rn = float(np.max(np.abs(Fn)))
                if rn < res or rn < tol:
                    break
            step *= 0.5
        else:
            raise NonConvergenceError("line search failed in equilibrium Newton", res)
        X, F, res = Xn, Fn, rn
    return _finish(model, X, res, it, center_tol)


def lift_flat(eq0d: Equilibrium, params1d: ModelParams) -> np.ndarray:
    """Flat point of the discretized model built from a 0D equilibrium.

    States are constant; costates carry the node payoff weights, which halves
    them at the two boundary nodes so that every node uses the same control.
    """
    model = make_model(params1d)
    P, lam = float(eq0d.point[0]), float(eq0d.point[1])
    return model.point(np.full(model.n, P), model.weights * lam)


def equilibria_0d(model: CanonicalModel, grid=None, tol: float = 1e-12) -> list[Equilibrium]:
    """Multistart search for equilibria of the one-state model.

    Each start pairs a grid state with the costate that zeroes the costate
    equation, then runs :func:`newton_solve`.  Results are merged and sorted
    by state.
    """
    if model.n != 1:
        raise ValueError("equilibria_0d handles the one-state model only")
    p = model.params
    if grid is None:
        grid = np.linspace(0.05, 4.0, 80)
    found = []
    for P in grid:
        dphi = 2 * P / (1 + P * P) ** 2
        denom = p.rho + p.b - dphi
        if abs(denom) < 1e-8:
            continue
        lam = -2 * p.c * P / denom
        try:
            eq = newton_solve(model, [P, lam], tol=tol)
        except NonConvergenceError:
            continue
        if eq.admissible:
            found.append(eq)
    eqs = merge_equilibria(found)
    return sorted(eqs, key=lambda e: e.point[0])


def merge_equilibria(eqs, tol: float = 1e-6):
    """Drop duplicates (max-norm distance below ``tol``), keeping first occurrences."""
    kept: list[Equilibrium] = []
    for e in eqs:
        if not any(
            np.max(np.abs(e.point - k.point)) < tol and _same_params(e.params, k.params)
            for k in kept
        ):
            kept.append(e)
    return kept


def _same_params(a: ModelParams, b: ModelParams, tol=1e-6):
    return all(abs(getattr(a, f) - getattr(b, f)) < tol for f in ("rho", "b", "c", "D", "L")) and a.N == b.N


# --------------------------------------------------------------------------
# continuation


@dataclass
class ContinuationOptions:
    max_points: int = 750
    max_step: float = 0.1
    init_step: float = 0.01
    min_step: float = 1e-6
    tol: float = 1e-10
    max_newton: int = 8
    bounds: tuple[float, float] = (-np.inf, np.inf)
    locate_tol: float = 1e-8
    detect: bool = True
    check_closed: int = 50
    closed_tol: float = 1e-4


@dataclass
class BranchEvent:
    index: int
    kind: str
    parameter_value: float
    point: np.ndarray
    tangent: np.ndarray
    null_direction: np.ndarray | None = None


@dataclass
class Branch:
    parameter_name: str
    base_params: ModelParams
    points: np.ndarray
    events: list[BranchEvent] = field(default_factory=list)
    tangents: np.ndarray | None = None
    stop_reason: str = ""

    @property
    def parameter_values(self):
        return self.points[:, -1]

    @property
    def states(self):
        n = (self.points.shape[1] - 1) // 2
        return self.points[:, :n]

    def branch_points(self):
        return [e for e in self.events if e.kind == "branch_point"]

    def folds(self):
        return [e for e in self.events if e.kind == "fold"]

    def params_at(self, value) -> ModelParams:
        return self.base_params.replace(**{self.parameter_name: float(value)})


class _Extended:
    """``G(X, p) = F(X; p)`` with the parameter as the last unknown."""

    def __init__(self, model: CanonicalModel, name: str):
        self.model = model
        self.name = name
        self._cache = {}

    def at(self, p) -> CanonicalModel:
        p = float(p)
        m = self._cache.get(p)
        if m is None:
            if len(self._cache) > 64:
                self._cache.clear()
            m = self.model.with_params(**{self.name: p})
            self._cache[p] = m
        return m

    def G(self, y):
        return self.at(y[-1]).rhs(y[:-1], check=False)

    def Gy(self, y):
        m = self.at(y[-1])
        X = y[:-1]
        return np.column_stack([m.jacobian(X), m.param_derivative(X, self.name)])


def _solve(A, b):
    # near branch points the bordered systems are ill-conditioned by design
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        return la.solve(A, b)


def _tangent(Gy, border):
    d = Gy.shape[0]
    A = np.vstack([Gy, border])
    rhs = np.zeros(d + 1)
    rhs[-1] = 1.0
    t = _solve(A, rhs)
    t /= np.linalg.norm(t)
    if t @ border < 0:
        t = -t
    return t


def _initial_tangent(Gy, direction):
    _, _, vt = la.svd(Gy)
    t = vt[-1]
    if direction is None:
        t = t if t[-1] >= 0 else -t
    else:
        direction = np.asarray(direction, float)
        t = t if t @ direction >= 0 else -t
    return t / np.linalg.norm(t)


def _correct(ext: _Extended, y_pred, normal, opts):
    y = y_pred.copy()
    d = len(y) - 1
    for it in range(1, opts.max_newton + 1):
        with np.errstate(all="ignore"):
            try:
                G = ext.G(y)
            except (ValueError, ZeroDivisionError):
                return None, it
        if not np.all(np.isfinite(G)):
            return None, it
        r = np.append(G, normal @ (y - y_pred))
        A = np.vstack([ext.Gy(y), normal])
        try:
            dy = _solve(A, -r)
        except (la.LinAlgError, ValueError):
            return None, it
        y = y + dy
        if np.max(np.abs(dy)) < opts.tol * max(1.0, np.max(np.abs(y))):
            with np.errstate(all="ignore"):
                G = ext.G(y)
            if np.all(np.isfinite(G)) and np.max(np.abs(G)) < max(opts.tol, 1e-9):
                return y, it
    with np.errstate(all="ignore"):
        G = ext.G(y)
    if np.all(np.isfinite(G)) and np.max(np.abs(G)) < opts.tol:
        return y, opts.max_newton
    return None, opts.max_newton


def _bp_test(Gy, t):
    sign, _ = np.linalg.slogdet(np.vstack([Gy, t]))
    return sign


def continue_equilibria(
    model: CanonicalModel,
    start,
    parameter: str,
    opts: ContinuationOptions | None = None,
    direction=None,
) -> Branch:
    """Pseudo-arclength continuation of equilibria in one model parameter.

    Parameters
    ----------
    model : CanonicalModel
    start : Equilibrium or array
        Converged equilibrium (or canonical point) at the model's parameters.
    parameter : str
        Name of the continued parameter (``"b"``, ``"c"``, ...).
    direction : array, optional
        Vector in ``(X, p)`` space fixing the initial orientation; the default
        increases the parameter.  A scalar ``-1`` decreases it.

    Returns
    -------
    Branch
        Points ``(X, p)`` with localized fold and branch-point events.
    """
    opts = opts or ContinuationOptions()
    X0 = start.point if isinstance(start, Equilibrium) else np.asarray(start, float)
    p0 = getattr(model.params, parameter)
    ext = _Extended(model, parameter)
    y = np.append(X0, p0)
    if np.max(np.abs(ext.G(y))) > 1e-8:
        raise NonConvergenceError("continuation start is not an equilibrium", np.max(np.abs(ext.G(y))))
    if np.isscalar(direction):
        dvec = np.zeros_like(y)
        dvec[-1] = float(direction)
        direction = dvec
    t = _initial_tangent(ext.Gy(y), direction)
    points = [y]
    tangents = [t]
    events: list[BranchEvent] = []
    Gy = ext.Gy(y)
    bp_sign = _bp_test(Gy, t)
    step = opts.init_step
    lo, hi = opts.bounds
    reason = "max_points"
    while len(points) < opts.max_points:
        y_new, its = _correct(ext, y + step * t, t, opts)
        if y_new is None:
            step *= 0.5
            if step < opts.min_step:
                reason = "stall"
                log.warning("equilibrium continuation stalled at %s=%g", parameter, y[-1])
                break
            continue
        Gy_new = ext.Gy(y_new)
        try:
            t_new = _tangent(Gy_new, t)
        except la.LinAlgError:
            step *= 0.5
            continue
        if t_new @ t < 0.5 and step > 2 * opts.min_step:
            # sharp turn: likely jumped between branches
            step *= 0.5
            continue
        if opts.detect:
            if np.sign(t_new[-1]) != np.sign(t[-1]) and t[-1] != 0:
                ev = _locate(ext, y, t, step, opts, "fold")
                ev.index = len(points) - 1
                events.append(ev)
            new_sign = _bp_test(Gy_new, t_new)
            if new_sign != bp_sign:
                ev = _locate(ext, y, t, step, opts, "branch_point")
                ev.index = len(points) - 1
                events.append(ev)
                bp_sign = new_sign
        points.append(y_new)
        tangents.append(t_new)
        y, t = y_new, t_new
        if not lo <= y[-1] <= hi:
            reason = "bounds"
            break
        if (
            opts.check_closed
            and len(points) > opts.check_closed
            and np.linalg.norm(y - points[0]) < opts.closed_tol + step
        ):
            reason = "closed"
            break
        if its <= 3:
            step = min(step * 1.3, opts.max_step)
    return Branch(
        parameter_name=parameter,
        base_params=model.params,
        points=np.array(points),
        events=events,
        tangents=np.array(tangents),
        stop_reason=reason,
    )


def _locate(ext, y0, t0, s_hi, opts, kind):
    # Near a branch point the bordered matrix is singular, so the tangent
    # from the last regular point borders every test evaluation.
    def evaluate(s):
        y, _ = _correct(ext, y0 + s * t0, t0, opts)
        if y is None:
            return None, None
        Gy = ext.Gy(y)
        if kind == "fold":
            return y, np.sign(_tangent(Gy, t0)[-1])
        return y, _bp_test(Gy, t0)

    f_lo = np.sign(t0[-1]) if kind == "fold" else _bp_test(ext.Gy(y0), t0)
    s_lo = 0.0
    y_best = None
    while s_hi - s_lo > opts.locate_tol:
        s = 0.5 * (s_lo + s_hi)
        y, val = evaluate(s)
        if y is None:
            break
        if val == f_lo:
            s_lo = s
        else:
            s_hi = s
            y_best = y
    if y_best is None:
        y_best, _ = evaluate(s_hi)
    Gy = ext.Gy(y_best)
    tangent = _tangent(Gy, t0) if kind == "fold" else t0
    event = BranchEvent(
        index=-1,
        kind=kind,
        parameter_value=float(y_best[-1]),
        point=y_best,
        tangent=tangent,
    )
    if kind == "branch_point":
        _, _, vt = la.svd(Gy)
        basis = vt[-2:]
        bt = basis @ t0
        nd = np.array([-bt[1], bt[0]]) @ basis
        event.null_direction = nd / np.linalg.norm(nd)
    return event


def _distance_to_polyline(y, pts):
    a, b = pts[:-1], pts[1:]
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    s = np.clip(np.einsum("ij,ij->i", y - a, ab) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    proj = a + s[:, None] * ab
    return float(np.min(np.linalg.norm(y - proj, axis=1)))


def switch_branch(
    model: CanonicalModel,
    branch: Branch,
    event: BranchEvent,
    amplitude: float = 0.01,
    opts: ContinuationOptions | None = None,
):
    """Step off a branch point onto the bifurcating branch.

    Returns ``(equilibrium, direction)`` where ``direction`` orients a
    subsequent :func:`continue_equilibria` call away from the branch point.
    """
    if event.kind != "branch_point":
        raise ValueError("switch_branch needs a branch-point event")
    opts = opts or ContinuationOptions()
    ext = _Extended(model.with_params(**{branch.parameter_name: event.parameter_value}), branch.parameter_name)
    w = event.null_direction
    y_pred = event.point + amplitude * w
    y, _ = _correct(ext, y_pred, w, ContinuationOptions(tol=1e-12, max_newton=20))
    if y is None:
        raise BranchSwitchError(f"corrector failed after switching with amplitude {amplitude}")
    lo = max(event.index - 5, 0)
    near = np.vstack([branch.points[lo : event.index + 7], event.point])
    near = near[np.argsort((near - event.point) @ event.tangent)]
    dist = _distance_to_polyline(y, near)
    if dist < 0.25 * abs(amplitude) or amplitude == 0:
        raise BranchSwitchError(
            f"fell back onto the original branch (distance {dist:.2e}); try a larger amplitude"
        )
    m = ext.at(y[-1])
    eq = newton_solve(m, y[:-1])
    return eq, np.sign(amplitude) * w


def equilibria_at(branches, value: float, tol: float = 1e-12, merge_tol: float = 1e-6):
    """Equilibria where any branch crosses ``parameter = value``.

    Each crossing is re-converged by Newton at exactly ``value``; duplicates
    are merged.
    """
    found = []
    for br in branches:
        p = br.parameter_values
        params = br.params_at(value)
        model = make_model(params)
        for k in range(len(p) - 1):
            a, b = p[k] - value, p[k + 1] - value
            if a == 0 or a * b < 0:
                s = 0.0 if a == 0 else a / (a - b)
                X = (1 - s) * br.points[k, :-1] + s * br.points[k + 1, :-1]
                try:
                    found.append(newton_solve(model, X, tol=tol))
                except NonConvergenceError:
                    log.warning("crossing %d of a %s-branch did not re-converge", k, br.parameter_name)
        if len(p) and p[-1] == value:
            found.append(newton_solve(model, br.points[-1, :-1], tol=tol))
    return merge_equilibria(found, merge_tol)


def _continue_job(args):
    model, eq, parameter, opts, direction = args
    return continue_equilibria(model, eq, parameter, opts, direction=direction)


def _run_jobs(jobs, tasks):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_continue_job, tasks))
    return [_continue_job(t) for t in tasks]


def bifurcation_tree(
    model: CanonicalModel,
    seeds,
    parameter: str,
    opts: ContinuationOptions | None = None,
    sub_opts: ContinuationOptions | None = None,
    depth: int = 2,
    amplitude: float = 0.01,
    jobs: int = 1,
) -> list[Branch]:
    """Continue seed equilibria and every branch reachable by switching.

    Each seed is continued in both parameter directions.  Every branch point
    found on a level-``k`` branch (``k < depth``) is switched with
    ``+amplitude`` and ``-amplitude`` and the result continued with
    ``sub_opts``.  A switch landing on an already known branch is skipped.

    Parameters
    ----------
    seeds : sequence of Equilibrium
        Converged equilibria at ``model.params``.
    depth : int
        Number of switching generations; ``0`` only continues the seeds.
    jobs : int
        Worker processes for the continuations of one generation.

    Returns
    -------
    list of Branch
        Seed branches first, then switched branches in generation order.
    """
    opts = opts or ContinuationOptions()
    sub_opts = sub_opts or opts
    tasks = [(model, eq, parameter, opts, d) for eq in seeds for d in (1.0, -1.0)]
    level = _run_jobs(jobs, tasks)
    branches = list(level)
    for gen in range(depth):
        tasks = []
        for br in level:
            for ev in br.branch_points():
                m = model.with_params(**{parameter: ev.parameter_value})
                for amp in (amplitude, -amplitude):
                    try:
                        eq, dirn = switch_branch(m, br, ev, amp)
                    except (BranchSwitchError, NonConvergenceError) as exc:
                        log.info("switch at %s=%.6g failed: %s", parameter, ev.parameter_value, exc)
                        continue
                    y = np.append(eq.point, getattr(eq.params, parameter))
                    known = [b for b in branches if b is not br]
                    if any(_distance_to_polyline(y, b.points) < 0.25 * abs(amplitude) for b in known if len(b.points) > 1):
                        continue
                    if any(np.linalg.norm(y - np.append(t[1].point, getattr(t[1].params, parameter))) < 0.25 * abs(amplitude) for t in tasks):
                        continue
                    tasks.append((eq.model, eq, parameter, sub_opts, dirn))
        level = _run_jobs(jobs, tasks)
        log.info("generation %d: %d new branches", gen + 1, len(level))
        branches.extend(level)
        if not level:
            break
    return branches
