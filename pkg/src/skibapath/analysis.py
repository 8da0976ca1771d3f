"""Slice manifolds, objective comparisons and optimal-structure classification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .errors import NonConvergenceError, NumericalError, SkibaPathError, SpecificationError

log = logging.getLogger(__name__)

__all__ = [
    "SliceManifold",
    "IndifferencePoint",
    "StructureReport",
    "NotIntersectingError",
    "comparable",
    "find_indifference_point",
    "classify_structure",
    "objective_curve",
    "objective_by_quadrature",
    "stall_point",
    "HOMOGENEOUS_TOL",
]

HOMOGENEOUS_TOL = 1e-6


class NotIntersectingError(SkibaPathError, ValueError):
    """Comparable slice manifolds cover disjoint parts of their common line."""


@dataclass
class SliceManifold:
    """Initial points swept by one stable-path continuation.

    ``initial_points`` has one row ``X(0)`` per accepted step; the anchor
    line is ``start + alpha (goal - start)``.
    """

    arclength: np.ndarray
    kappa: np.ndarray
    initial_points: np.ndarray
    objective: np.ndarray
    admissible: np.ndarray
    start: np.ndarray
    goal: np.ndarray
    target: object = None
    label: str = ""
    run: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.kappa)

    @property
    def n(self) -> int:
        return len(self.start)

    @property
    def states(self):
        return self.initial_points[:, : self.n]

    @property
    def direction(self):
        return self.goal - self.start

    def line_parameter(self, base, direction) -> np.ndarray:
        """Coordinates ``alpha`` of the initial states on ``base + alpha direction``."""
        d = np.asarray(direction, float)
        return (self.states - base) @ d / (d @ d)

    def monotone_prefix(self, alpha) -> slice:
        """Records from the start up to the first reversal of ``alpha``."""
        if len(alpha) < 2:
            return slice(0, len(alpha))
        da = np.diff(alpha)
        sign = np.sign(da[np.flatnonzero(da)[0]]) if np.any(da) else 1.0
        bad = np.flatnonzero(sign * da < 0)
        end = bad[0] + 1 if bad.size else len(alpha)
        return slice(0, end)


@dataclass
class IndifferencePoint:
    states: np.ndarray
    alpha: float
    objective: float
    objectives: tuple
    paths: tuple
    targets: tuple
    control_jump: float
    classification: str


@dataclass
class StructureReport:
    kind: str
    indifference_points: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    details: dict = field(default_factory=dict)


def _check_anchors(sm: SliceManifold):
    if np.linalg.norm(sm.direction) == 0:
        raise SpecificationError("degenerate slice manifold: start and goal coincide")


def comparable(sm1: SliceManifold, sm2: SliceManifold, tol: float = 1e-8) -> bool:
    """Whether the anchor lines of two slice manifolds coincide.

    Directions must be parallel (sine of the angle below ``tol``) and the
    offset between the start points must lie along the common direction
    (relative residual below ``tol``).
    """
    _check_anchors(sm1)
    _check_anchors(sm2)
    d1 = sm1.direction / np.linalg.norm(sm1.direction)
    d2 = sm2.direction / np.linalg.norm(sm2.direction)
    if np.linalg.norm(d1 - (d1 @ d2) * d2) > tol:
        return False
    off = sm2.start - sm1.start
    scale = max(np.linalg.norm(sm1.direction), np.linalg.norm(sm2.direction), 1.0)
    return bool(np.linalg.norm(off - (off @ d1) * d1) <= tol * scale)


def _crossings(a1, J1, a2, J2):
    lo = max(a1.min(), a2.min())
    hi = min(a1.max(), a2.max())
    if lo >= hi:
        raise NotIntersectingError(f"line parameters overlap on an empty set ({lo:.4g} >= {hi:.4g})")
    o1, o2 = np.argsort(a1), np.argsort(a2)
    grid = np.union1d(a1[(a1 >= lo) & (a1 <= hi)], a2[(a2 >= lo) & (a2 <= hi)])
    grid = np.union1d(grid, [lo, hi])
    g = np.interp(grid, a1[o1], J1[o1]) - np.interp(grid, a2[o2], J2[o2])
    out = []
    for k in range(len(grid) - 1):
        if g[k] == 0 or g[k] * g[k + 1] < 0:
            out.append((grid[k], grid[k + 1]))
    if g[-1] == 0:
        out.append((grid[-1], grid[-1]))
    return out, (lo, hi), grid, g


def _nearest_step(sm: SliceManifold, alpha_rec, alpha):
    # alpha_rec covers the monotone prefix only, so the guess stays on one sheet
    return sm.run.steps[int(np.argmin(np.abs(alpha_rec - alpha)))].solution


def find_indifference_point(
    sm1: SliceManifold,
    sm2: SliceManifold,
    tol: float = 1e-12,
    max_iter: int = 60,
    resolve: bool = True,
):
    """Objective crossing of two comparable slice manifolds.

    Both manifolds are parameterized by the line coordinate ``alpha`` of the
    first one; only the segment from each start up to its first turning
    point is used.  The crossing of the piecewise-linear objective curves is
    bracketed and refined by Brent's method on re-solved stable paths.

    Returns
    -------
    IndifferencePoint or None
        ``None`` when the objective curves do not cross on the overlap.

    Raises
    ------
    SpecificationError
        The manifolds are not comparable.
    NotIntersectingError
        The manifolds cover disjoint segments of the line.
    """
    if not comparable(sm1, sm2):
        raise SpecificationError("slice manifolds are not comparable")
    base, d = sm1.start, sm1.direction
    a1 = sm1.line_parameter(base, d)
    a2 = sm2.line_parameter(base, d)
    s1, s2 = sm1.monotone_prefix(a1), sm2.monotone_prefix(a2)
    m1 = s1.stop > 1 and np.all(sm1.admissible[s1])
    m2 = s2.stop > 1 and np.all(sm2.admissible[s2])
    if not (m1 and m2):
        keep1 = sm1.admissible[s1]
        keep2 = sm2.admissible[s2]
    else:
        keep1 = np.ones(s1.stop, bool)
        keep2 = np.ones(s2.stop, bool)
    A1, J1 = a1[s1][keep1], sm1.objective[s1][keep1]
    A2, J2 = a2[s2][keep2], sm2.objective[s2][keep2]
    if len(A1) < 2 or len(A2) < 2:
        raise NotIntersectingError("too few admissible records on a slice manifold")
    roots, _, _, _ = _crossings(A1, J1, A2, J2)
    if not roots:
        return None
    lo, hi = roots[0]
    if not resolve or sm1.run is None or sm2.run is None:
        o1, o2 = np.argsort(A1), np.argsort(A2)
        g = [np.interp(a, A1[o1], J1[o1]) - np.interp(a, A2[o2], J2[o2]) for a in (lo, hi)]
        alpha = lo if g[0] == g[1] else lo - g[0] * (hi - lo) / (g[1] - g[0])
        return _point_from_records(sm1, sm2, A1, J1, A2, J2, alpha, base, d)
    p1 = np.where(np.arange(len(a1)) < s1.stop, a1, np.inf)
    p2 = np.where(np.arange(len(a2)) < s2.stop, a2, np.inf)
    return _refine_crossing(sm1, sm2, (p1, A1, J1), (p2, A2, J2), (lo, hi), base, d, tol, max_iter)


def _point_from_records(sm1, sm2, A1, O1, A2, O2, alpha, base, d):
    o1, o2 = np.argsort(A1), np.argsort(A2)
    J1 = float(np.interp(alpha, A1[o1], O1[o1]))
    J2 = float(np.interp(alpha, A2[o2], O2[o2]))
    x = base + alpha * d
    return IndifferencePoint(x, float(alpha), 0.5 * (J1 + J2), (J1, J2), (None, None), (sm1.target, sm2.target), float("nan"), _kind(x))


def _kind(x):
    return "homogeneous" if np.ptp(x) < HOMOGENEOUS_TOL else "heterogeneous"


def _refine_crossing(sm1, sm2, rec1, rec2, bracket, base, d, tol, max_iter):
    from .homotopy import solve_stable_path

    model = sm1.run.model
    rho = model.params.rho
    a1, a2 = rec1[0], rec2[0]
    cache = {}

    def evaluate(al):
        if al not in cache:
            x = base + al * d
            p1 = solve_stable_path(model, sm1.target, x, _nearest_step(sm1, a1, al))
            p2 = solve_stable_path(model, sm2.target, x, _nearest_step(sm2, a2, al))
            J1 = float(model.hamiltonian(p1.y[0], check=False)) / rho
            J2 = float(model.hamiltonian(p2.y[0], check=False)) / rho
            cache[al] = (J1 - J2, (J1, J2), (p1, p2))
        return cache[al]

    lo, hi = bracket
    try:
        glo, ghi = evaluate(lo)[0], evaluate(hi)[0]
        if glo == 0:
            root = lo
        elif ghi == 0:
            root = hi
        elif glo * ghi > 0:
            raise NumericalError("re-solved objectives do not bracket the crossing")
        else:
            root = brentq(lambda a: evaluate(a)[0], lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=max_iter)
    except (NonConvergenceError, NumericalError, RuntimeError) as exc:
        log.warning("refining the crossing failed (%s); using the records", exc)
        return _point_from_records(sm1, sm2, *rec1[1:], *rec2[1:], 0.5 * (lo + hi), base, d)
    _, (J1, J2), (p1, p2) = evaluate(root)
    x = base + root * d
    jump = float(np.max(np.abs(model.control(p1.y[0]) - model.control(p2.y[0]))))
    return IndifferencePoint(
        states=x,
        alpha=float(root),
        objective=0.5 * (J1 + J2),
        objectives=(J1, J2),
        paths=(p1, p2),
        targets=(sm1.target, sm2.target),
        control_jump=jump,
        classification=_kind(x),
    )


def objective_curve(sm: SliceManifold) -> np.ndarray:
    """Pairs ``(spatial norm of the initial states, objective)`` per record."""
    model = sm.run.model if sm.run is not None else None
    if model is not None:
        norms = model.spatial_norm(sm.states)
    else:
        norms = np.linalg.norm(sm.states, axis=1)
    keep = np.asarray(sm.admissible, bool)
    return np.column_stack([np.asarray(norms)[keep], sm.objective[keep]])


def objective_by_quadrature(model, path, n_points: int = 4001) -> float:
    """Discounted payoff integral along a path plus the equilibrium tail.

    ``int_0^T exp(-rho t) g(X(t)) dt + exp(-rho T) g(Xhat) / rho`` where
    ``Xhat`` is approximated by ``X(T)``.  Independent check of ``H / rho``.
    """
    rho = model.params.rho
    T = path.T
    if not np.isfinite(T):
        raise SpecificationError("path carries no horizon")
    s = np.linspace(0.0, 1.0, n_points)
    if path.yp is None:
        raise SpecificationError("path carries no node derivatives")
    X = path(s)
    t = T * s
    g = model.running_payoff(X)
    integral = simpson(np.exp(-rho * t) * g, x=t)
    return float(integral + np.exp(-rho * T) * model.running_payoff(path.y[-1]) / rho)


def _limit_near(sm: SliceManifold, x_eq, side_records=3):
    """Objective extrapolated from the record closest to ``x_eq`` along the manifold's line.

    The initial costate is the gradient of the objective with respect to the
    initial states, which gives the first-order correction to ``x_eq``.
    """
    d = sm.direction
    alpha = sm.line_parameter(sm.start, d)
    a_eq = (x_eq - sm.start) @ d / (d @ d)
    k = int(np.argmin(np.abs(alpha - a_eq)))
    step = x_eq - sm.states[k]
    dist = float(np.linalg.norm(step))
    return float(sm.objective[k] + sm.initial_points[k, sm.n :] @ step), dist


def classify_structure(model, equilibria, manifolds, probes=(), continuity_tol: float = 1e-4, approach_tol: float = 1e-2):
    """Classify the optimal structure from slice manifolds over a common line.

    Parameters
    ----------
    equilibria : sequence of Equilibrium
    manifolds : sequence of SliceManifold
        Stable-path slice manifolds toward the saddle-point equilibria.
    probes : sequence of SliceManifold
        Manifolds aimed at non-saddle equilibria; used for the threshold
        continuity test only.

    Returns
    -------
    StructureReport
        ``kind`` is ``"unique"``, ``"indifference"``, ``"threshold"`` or
        ``"inconclusive"``.
    """
    spp = [e for e in equilibria if e.spp]
    other = [e for e in equilibria if not e.spp]
    report = StructureReport("inconclusive")
    if len(spp) == 1 and not other:
        report.kind = "unique"
        report.details["reason"] = "single equilibrium with the saddle point property"
        return report
    if len(spp) <= 1:
        report.details["reason"] = "no pair of saddle-point equilibria"
        if len(spp) == 1:
            report.kind = "unique"
        return report
    pairs = []
    for i in range(len(manifolds)):
        for j in range(i + 1, len(manifolds)):
            a, b = manifolds[i], manifolds[j]
            if a.target is b.target or a.target is None or b.target is None:
                continue
            if np.allclose(a.target.point, b.target.point):
                continue
            if comparable(a, b):
                pairs.append((a, b))
    if not pairs:
        report.details["reason"] = "no comparable slice manifolds toward distinct targets"
        return report
    # thresholds: non-SPP equilibria approached from both sides with continuous objective
    for eq in other:
        J_eq = float(model.objective_value(eq.point))
        limits = []
        for sm in list(manifolds) + list(probes):
            if np.linalg.norm(sm.goal - eq.states) <= 1e-10 * max(1.0, np.linalg.norm(eq.states)):
                J, dist = _limit_near(sm, eq.states)
                if dist < approach_tol:
                    limits.append((J, dist))
        if len(limits) >= 2:
            gap = max(abs(J - J_eq) for J, _ in limits)
            report.details.setdefault("threshold_gaps", []).append(gap)
            if gap < continuity_tol:
                report.thresholds.append(eq)
    crossings = []
    for a, b in pairs:
        try:
            ip = find_indifference_point(a, b)
        except NotIntersectingError:
            continue
        if ip is not None:
            crossings.append(ip)
    if report.thresholds:
        report.kind = "threshold"
        report.indifference_points = crossings
        return report
    genuine = [ip for ip in crossings if not np.isfinite(ip.control_jump) or ip.control_jump > 1e-6]
    if genuine:
        report.kind = "indifference"
        report.indifference_points = genuine
        return report
    covered = []
    for a, b in pairs:
        try:
            _, (lo, hi), grid, g = _crossings(
                a.line_parameter(a.start, a.direction), a.objective,
                b.line_parameter(a.start, a.direction), b.objective,
            )
        except NotIntersectingError:
            continue
        covered.append((lo, hi, float(np.min(g)), float(np.max(g))))
    report.details["dominance"] = covered
    if covered and all(gmin >= 0 or gmax <= 0 for _, _, gmin, gmax in covered):
        report.kind = "unique"
    return report


def stall_point(run, window: int = 5, tol: float = 1e-3):
    """Limit value of ``kappa`` approached by a saturating run.

    A run saturates when it reported a stall, or when the last ``window``
    accepted steps advanced ``kappa`` by less than ``tol`` in total while
    the horizon grew.

    Returns
    -------
    (kappa, states) or None
    """
    steps = run.steps
    if run.target_hit or not steps:
        return None
    n = run.model.n
    last = steps[-1]
    if run.status != "stall":
        if len(steps) <= window:
            return None
        k = np.array([s.kappa for s in steps[-window - 1 :]])
        T = np.array([s.solution.T for s in steps[-window - 1 :]])
        if abs(k[-1] - k[0]) >= tol or not T[-1] > T[0]:
            return None
    return float(last.kappa), last.solution.y[0, :n].copy()
