"""Moore-Penrose continuation of stable paths and indifference points.

Every homotopy is a boundary value problem on ``[0, 1]`` with time scaled by
the truncation horizon ``T`` and one equation short of being determined.
The missing equation is the orthogonality of the correction to the current
tangent in the extended inner product ``int V.W dt + V_p . W_p``; the
tangent is refreshed at each corrector iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .analysis import SliceManifold
from .bvp import (
    BvpOptions,
    BvpProblem,
    Discretization,
    MeshSolution,
    SingularLinearizationError,
    constant_solution,
    estimate_residual,
    newton,
    refine_mesh,
    remesh,
    remesh_linear,
    tangent_solve,
)
from .equilibrium import Equilibrium
from .errors import (
    NonConvergenceError,
    NumericalError,
    SingularControlError,
    SpecificationError,
)
from .model import CanonicalModel
from .spectral import asymptotic_bc_matrix, truncation_time

log = logging.getLogger(__name__)

__all__ = [
    "HomotopyOptions",
    "HomotopyStep",
    "RunEvent",
    "ContinuationRun",
    "StablePathBvp",
    "IndifferenceBvp",
    "stable_path_homotopy",
    "stable_path_homotopy_nonspp",
    "continue_path",
    "enable_moving_horizon",
    "continue_indifference_point",
    "solve_stable_path",
]


@dataclass
class HomotopyOptions:
    """Step control and solver settings of a continuation run.

    ``init_step`` and ``max_step`` are measured in the extended norm.
    """

    init_step: float = 0.5
    max_step: float = 1.0
    min_step: float = 1e-6
    max_steps: int = 300
    grow: float = 1.3
    fast_newton: int = 2
    max_newton: int = 8
    newton_tol: float = 1e-10
    target: float = 1.0
    stall_halvings: int = 3
    initial_intervals: int = 20
    T0: float = 10.0
    max_horizon_factor: float = 100.0
    max_end_distance: float | None = None
    # fixed-horizon stable paths hand over to a free horizon beyond this end distance
    end_tolerance: float | None = 0.02
    bvp: BvpOptions = field(default_factory=BvpOptions)


@dataclass(frozen=True)
class HomotopyStep:
    index: int
    solution: MeshSolution
    tangent: MeshSolution
    kappa: float
    step_width: float
    newton_iterations: int
    admissible: bool

    @property
    def free(self):
        return self.solution.p

    @property
    def T(self):
        return self.solution.T


@dataclass(frozen=True)
class RunEvent:
    kind: str
    step: int
    info: str = ""


# --------------------------------------------------------------------------
# problem builders


def _safe_rhs(model: CanonicalModel, Y):
    try:
        with np.errstate(all="ignore"):
            return model.rhs(Y, check=False)
    except SingularControlError:
        return np.full(np.shape(Y), np.nan)


class StablePathBvp:
    """Stable path toward ``target`` with initial states on an affine family.

    The initial condition is
    ``states(X(0)) = start + kappa_0 (goal - start) + sum_i kappa_i v_i``
    and the end point satisfies ``F^T (X(1) - Xhat) = 0`` with ``F``
    spanning the complement of the stable eigenspace.  With
    ``moving_horizon`` the horizon ``T`` is an additional unknown and
    ``|X(1) - Xhat|^2 = epsilon^2`` closes the system.

    Free parameters are ordered ``(kappa_0, kappa_1, ..., [T])``.
    """

    def __init__(
        self,
        model: CanonicalModel,
        target: Equilibrium,
        start,
        goal,
        free_vectors=None,
        T: float | None = None,
        epsilon: float | None = None,
        T0: float = 10.0,
    ):
        self.model = model
        self.target = target
        n = model.n
        self.start = np.asarray(start, float).reshape(n)
        self.goal = np.asarray(goal, float).reshape(n)
        V = np.zeros((n, 0)) if free_vectors is None else np.asarray(free_vectors, float).reshape(-1, n).T
        self.V = V
        spec = target.spectral
        if not spec.hyperbolic:
            raise SpecificationError("target equilibrium is not hyperbolic")
        need = n - spec.n_s
        if need < 0:
            raise SpecificationError("target has more stable directions than states")
        if V.shape[1] != need:
            raise SpecificationError(
                f"target has defect {spec.defect}: need {need} free vector(s), got {V.shape[1]}"
            )
        if need:
            M = np.column_stack([self.goal - self.start, V])
            if np.linalg.matrix_rank(M) < need + 1:
                raise SpecificationError("rank condition violated: free vectors and anchor direction are dependent")
        self.F = asymptotic_bc_matrix(spec)
        self.Xhat = target.point
        self.T = float(T) if T is not None else truncation_time(spec, T0)
        self.moving = epsilon is not None
        self.epsilon = None if epsilon is None else float(epsilon)
        self.n_kappa = 1 + need

    @property
    def n_free(self):
        return self.n_kappa + (1 if self.moving else 0)

    def horizon(self, p):
        return float(p[-1]) if self.moving else self.T

    def initial_states(self, p):
        k = np.asarray(p[: self.n_kappa])
        return self.start + k[0] * (self.goal - self.start) + self.V @ k[1:]

    def problem(self) -> BvpProblem:
        m = self.model
        n, d = m.n, m.dim
        rows, cols = m.jac_sparsity
        F, Xhat, nk = self.F, self.Xhat, self.n_kappa

        def fun(t, Y, p):
            return self.horizon(p) * _safe_rhs(m, Y)

        def jac(t, Y, p):
            with np.errstate(all="ignore"):
                return self.horizon(p) * m.jac_values(Y)

        def fun_p(t, Y, p):
            out = np.zeros((len(t), d, self.n_free))
            if self.moving:
                out[:, :, -1] = _safe_rhs(m, Y)
            return out

        def bc(ya, yb, p):
            parts = [ya[:n] - self.initial_states(p), F.T @ (yb - Xhat)]
            if self.moving:
                e = yb - Xhat
                parts.append([e @ e - self.epsilon**2])
            return np.concatenate(parts)

        def bc_jac(ya, yb, p):
            nb = n + F.shape[1] + (1 if self.moving else 0)
            Ba = np.zeros((nb, d))
            Bb = np.zeros((nb, d))
            Bp = np.zeros((nb, self.n_free))
            Ba[:n, :n] = np.eye(n)
            Bp[:n, 0] = -(self.goal - self.start)
            Bp[:n, 1:nk] = -self.V
            Bb[n : n + F.shape[1]] = F.T
            if self.moving:
                Bb[-1] = 2 * (yb - Xhat)
            return Ba, Bb, Bp

        nbc = n + F.shape[1] + (1 if self.moving else 0)
        return BvpProblem(d, self.n_free, fun, bc, jac=jac, jac_pattern=(rows, cols), fun_p=fun_p, bc_jac=bc_jac, n_bc=nbc)

    def end_distance(self, sol: MeshSolution) -> float:
        return float(np.linalg.norm(sol.y[-1] - self.Xhat))


class IndifferenceBvp:
    """Two paths from shared initial states with equal Hamiltonians.

    Unknown function ``Y = (X_1, X_2)``; free parameters ``(kappa_1,
    kappa_2)``.  The shared initial states move along
    ``x1 + kappa_1 (x2 - x1) + kappa_2 V``.
    """

    def __init__(self, model, targets, x_from, x_to, V, T):
        self.model = model
        self.targets = targets
        n = model.n
        self.x1 = np.asarray(x_from, float).reshape(n)
        self.x2 = np.asarray(x_to, float).reshape(n)
        self.V = np.asarray(V, float).reshape(n)
        if np.linalg.matrix_rank(np.column_stack([self.x2 - self.x1, self.V])) < 2:
            raise SpecificationError("V must be linearly independent of the connecting direction")
        self.F = [asymptotic_bc_matrix(t.spectral) for t in targets]
        for t, F in zip(targets, self.F):
            if F.shape[1] != n:
                raise SpecificationError("indifference continuation needs two equilibria with the saddle point property")
        self.Xhat = [t.point for t in targets]
        self.T = [float(T[0]), float(T[1])]
        self.n_free = 2

    def initial_states(self, p):
        return self.x1 + p[0] * (self.x2 - self.x1) + p[1] * self.V

    def problem(self) -> BvpProblem:
        m = self.model
        n, d = m.n, m.dim
        r, c = m.jac_sparsity
        rows = np.concatenate([r, r + d])
        cols = np.concatenate([c, c + d])
        T1, T2 = self.T
        F1, F2 = self.F
        X1h, X2h = self.Xhat

        def fun(t, Y, p):
            return np.concatenate([T1 * _safe_rhs(m, Y[:, :d]), T2 * _safe_rhs(m, Y[:, d:])], axis=1)

        def jac(t, Y, p):
            with np.errstate(all="ignore"):
                return np.concatenate([T1 * m.jac_values(Y[:, :d]), T2 * m.jac_values(Y[:, d:])], axis=1)

        def fun_p(t, Y, p):
            return np.zeros((len(t), 2 * d, 2))

        def ham(X):
            with np.errstate(all="ignore"):
                return m.hamiltonian(X, check=False)

        def bc(ya, yb, p):
            a1, a2 = ya[:d], ya[d:]
            return np.concatenate(
                [
                    a1[:n] - a2[:n],
                    [ham(a1) - ham(a2)],
                    F1.T @ (yb[:d] - X1h),
                    F2.T @ (yb[d:] - X2h),
                    a1[:n] - self.initial_states(p),
                ]
            )

        def bc_jac(ya, yb, p):
            nb = 4 * n + 1
            Ba = np.zeros((nb, 2 * d))
            Bb = np.zeros((nb, 2 * d))
            Bp = np.zeros((nb, 2))
            I = np.eye(n)
            Ba[:n, :n] = I
            Ba[:n, d : d + n] = -I
            Ba[n, :d] = m.hamiltonian_gradient(ya[:d])
            Ba[n, d:] = -m.hamiltonian_gradient(ya[d:])
            Bb[n + 1 : 2 * n + 1, :d] = F1.T
            Bb[2 * n + 1 : 3 * n + 1, d:] = F2.T
            Ba[3 * n + 1 :, :n] = I
            Bp[3 * n + 1 :, 0] = -(self.x2 - self.x1)
            Bp[3 * n + 1 :, 1] = -self.V
            return Ba, Bb, Bp

        return BvpProblem(2 * d, 2, fun, bc, jac=jac, jac_pattern=(rows, cols), fun_p=fun_p, bc_jac=bc_jac, n_bc=4 * n + 1)

    def end_distance(self, sol: MeshSolution) -> float:
        d = self.model.dim
        return max(
            float(np.linalg.norm(sol.y[-1, :d] - self.Xhat[0])),
            float(np.linalg.norm(sol.y[-1, d:] - self.Xhat[1])),
        )

    def hamiltonian_gap(self, sol: MeshSolution) -> float:
        d = self.model.dim
        m = self.model
        return float(abs(m.hamiltonian(sol.y[0, :d], check=False) - m.hamiltonian(sol.y[0, d:], check=False)))


# --------------------------------------------------------------------------
# run record


@dataclass
class ContinuationRun:
    """Accepted steps and events of one continuation.

    ``status`` is ``"target_hit"``, ``"stall"``, ``"max_steps"`` or
    ``"stopped"``.
    """

    variant: str
    builder: object
    steps: list = field(default_factory=list)
    events: list = field(default_factory=list)
    options: HomotopyOptions = field(default_factory=HomotopyOptions)
    status: str = "running"
    meta: dict = field(default_factory=dict)

    @property
    def model(self) -> CanonicalModel:
        return self.builder.model

    @property
    def kappas(self) -> np.ndarray:
        return np.array([s.kappa for s in self.steps])

    @property
    def final(self) -> HomotopyStep:
        return self.steps[-1]

    @property
    def target_hit(self) -> bool:
        return self.status == "target_hit"

    def max_kappa(self) -> float:
        return float(np.max(self.kappas))

    def event_kinds(self):
        return [e.kind for e in self.events]

    def initial_points(self) -> np.ndarray:
        d = self.model.dim
        return np.array([s.solution.y[0, :d] for s in self.steps])

    def slice_manifold(self, label: str = "") -> SliceManifold:
        """Initial points and objective values of the accepted steps."""
        if not isinstance(self.builder, StablePathBvp):
            raise SpecificationError("slice manifolds are defined for stable-path runs")
        m = self.model
        X0 = self.initial_points()
        with np.errstate(all="ignore"):
            J = np.array([m.hamiltonian(x, check=False) for x in X0]) / m.params.rho
        # meshes differ between steps, so arclength accumulates accepted step widths
        s = np.cumsum([0.0] + [st.step_width for st in self.steps[1:]])
        b = self.builder
        return SliceManifold(
            arclength=s,
            kappa=self.kappas,
            initial_points=X0,
            objective=J,
            admissible=np.array([bool(m.is_admissible(x)) for x in X0]),
            start=b.start.copy(),
            goal=b.goal.copy(),
            target=b.target,
            label=label,
            run=self,
        )


# --------------------------------------------------------------------------
# continuation engine


def _mp_correct(disc: Discretization, z_pred, v, w, opts: HomotopyOptions):
    """Moore-Penrose corrector; returns ``(z, v, iterations)`` or ``None``."""
    z = z_pred.copy()
    rhs_t = np.zeros(disc.size)
    rhs_t[-1] = 1.0
    for it in range(1, opts.max_newton + 1):
        with np.errstate(all="ignore"):
            G = disc.residual(z)
        if not np.all(np.isfinite(G)):
            return None
        with np.errstate(all="ignore"):
            A = disc.jacobian(z)
        if not np.all(np.isfinite(A.data)):
            return None
        B = sp.vstack([A, sp.csr_matrix(w * v)]).tocsc()
        try:
            lu = _splu(B)
        except SingularLinearizationError:
            return None
        dz = lu.solve(np.append(-G, 0.0))
        vn = lu.solve(rhs_t)
        if not (np.all(np.isfinite(dz)) and np.all(np.isfinite(vn))):
            return None
        vn /= np.sqrt(np.sum(w * vn * vn))
        z = z + dz
        v = vn
        with np.errstate(all="ignore"):
            G = disc.residual(z)
        if not np.all(np.isfinite(G)):
            return None
        if np.max(np.abs(G)) < opts.newton_tol:
            return z, v, it
    return None


def _splu(B):
    import scipy.sparse.linalg as spla

    try:
        return spla.splu(B, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularLinearizationError(str(exc)) from exc


def _admissible(model, sol: MeshSolution, blocks) -> bool:
    ok = True
    for lo, hi in blocks:
        ok = ok and bool(np.all(model.is_admissible(sol.y[:, lo:hi]))) and bool(
            np.all(model.is_admissible(sol.ymid[:, lo:hi]))
        )
    return ok


def _blocks(builder):
    d = builder.model.dim
    return [(0, d), (d, 2 * d)] if isinstance(builder, IndifferenceBvp) else [(0, d)]


def _set_T(builder, sol: MeshSolution):
    if isinstance(builder, StablePathBvp):
        sol.T = builder.horizon(sol.p)
    return sol


def _adapt(problem, builder, z, v, disc, opts: HomotopyOptions):
    """Refine the mesh until the residual estimate meets the tolerance."""
    for _ in range(opts.bvp.max_refinements):
        sol = _set_T(builder, disc.solution(z))
        est = estimate_residual(problem, sol)
        scale = np.maximum(np.max(np.abs(sol.y[:-1]), axis=1), np.max(np.abs(sol.y[1:]), axis=1))
        ratio = est / (opts.bvp.abstol + opts.bvp.reltol * scale)
        sol.residual_estimate = est
        if np.all(ratio <= 1):
            return z, v, disc, sol
        new_mesh = refine_mesh(sol.mesh, ratio)
        if len(new_mesh) - 1 > opts.bvp.max_intervals:
            return None
        tan = _tangent_sol(disc, v)
        sol_new = remesh(problem, sol, new_mesh)
        tan_new = remesh_linear(tan, new_mesh)
        disc = Discretization(problem, new_mesh)
        w = disc.inner_weights()
        v = tan_new.pack()
        v /= np.sqrt(np.sum(w * v * v))
        res = _mp_correct(disc, sol_new.pack(), v, w, opts)
        if res is None:
            return None
        z, v, _ = res
    return None


def _tangent_sol(disc, v):
    y, ymid, p = disc.unpack(v)
    return MeshSolution(disc.mesh.copy(), y.copy(), ymid.copy(), p.copy())


def _pin_kappa(disc, z_guess, index, value, opts: HomotopyOptions):
    def extra(z):
        C = np.zeros((1, disc.size))
        C[0, disc.n_y + index] = 1.0
        return C, np.array([z[disc.n_y + index] - value])

    z, _, _ = newton(disc, z_guess, extra, tol=opts.newton_tol, max_iter=opts.max_newton + 4)
    return z


def _run(run: ContinuationRun, sol0: MeshSolution, tan0: MeshSolution | None, kappa_index: int = 0):
    """Drive a continuation from ``sol0`` until target, stall or max steps."""
    opts = run.options
    builder = run.builder
    problem = builder.problem()
    model = builder.model
    disc = Discretization(problem, sol0.mesh)
    w = disc.inner_weights()
    z = sol0.pack()
    if tan0 is None:
        tan0 = tangent_solve(problem, sol0, None, param_index=kappa_index)
    v = tan0.pack()
    v /= np.sqrt(np.sum(w * v * v))
    if not run.steps:
        sol = _set_T(builder, disc.solution(z))
        sol.residual_estimate = estimate_residual(problem, sol)
        run.steps.append(
            HomotopyStep(0, sol, _tangent_sol(disc, v), float(sol.p[kappa_index]), 0.0, 0, _admissible(model, sol, _blocks(builder)))
        )
    target = opts.target
    step = opts.init_step
    halvings_at_min = 0
    end0 = builder.end_distance(run.steps[-1].solution)
    max_end = opts.max_end_distance
    n_new = 0
    while n_new < opts.max_steps:
        kappa_old = z[disc.n_y + kappa_index]
        if abs(kappa_old - target) < 1e-12:
            run.status = "target_hit"
            run.events.append(RunEvent("target_hit", len(run.steps) - 1))
            return run
        res = _mp_correct(disc, z + step * v, v, w, opts)
        ok = res is not None
        if ok:
            z_new, v_new, its = res
            dist = np.sqrt(np.sum(w * (z_new - z) ** 2))
            ok = np.sum(w * v_new * v) > 0.5 and dist < 2.0 * step
        if ok:
            adapted = _adapt(problem, builder, z_new, v_new, disc, opts)
            ok = adapted is not None
        if not ok:
            if step <= opts.min_step * (1 + 1e-12):
                halvings_at_min += 1
                if halvings_at_min >= opts.stall_halvings:
                    run.status = "stall"
                    run.events.append(RunEvent("stall", len(run.steps) - 1, f"kappa={kappa_old:.12g}"))
                    log.info("continuation stalled at kappa=%.8g", kappa_old)
                    return run
            step = max(0.5 * step, opts.min_step)
            continue
        halvings_at_min = 0
        z_new, v_new, disc_new, sol = adapted
        if disc_new is not disc:
            # mesh changed: carry the previous point over for the crossing test
            z = remesh(problem, disc.solution(z), disc_new.mesh).pack()
            disc = disc_new
            w = disc.inner_weights()
        kappa_new = sol.p[kappa_index]
        if (kappa_old - target) * (kappa_new - target) < 0:
            theta = (target - kappa_old) / (kappa_new - kappa_old)
            try:
                zt = _pin_kappa(disc, z + theta * (z_new - z), kappa_index, target, opts)
            except (NonConvergenceError, NumericalError):
                zt = None
            if zt is not None:
                log.info("target value hit (overshoot kappa=%.6g)", kappa_new)
                run.meta["overshoot_kappa"] = float(kappa_new)
                sol = _set_T(builder, disc.solution(zt))
                sol.residual_estimate = estimate_residual(problem, sol)
                adm = _admissible(model, sol, _blocks(builder))
                run.steps.append(HomotopyStep(len(run.steps), sol, _tangent_sol(disc, v_new), float(target), step, its, adm))
                if not adm:
                    run.events.append(RunEvent("admissibility_violation", len(run.steps) - 1))
                run.events.append(RunEvent("target_hit", len(run.steps) - 1))
                run.status = "target_hit"
                return run
        adm = _admissible(model, sol, _blocks(builder))
        run.steps.append(HomotopyStep(len(run.steps), sol, _tangent_sol(disc, v_new), float(kappa_new), step, its, adm))
        n_new += 1
        if not adm:
            run.events.append(RunEvent("admissibility_violation", len(run.steps) - 1))
        z, v = z_new, v_new
        if isinstance(builder, StablePathBvp) and builder.moving:
            if sol.T > opts.max_horizon_factor * run.meta.get("T_activation", builder.T):
                run.status = "stall"
                run.events.append(RunEvent("stall", len(run.steps) - 1, f"horizon {sol.T:.6g} exceeds limit"))
                return run
        if (
            opts.end_tolerance is not None
            and isinstance(builder, StablePathBvp)
            and not builder.moving
            and builder.n_kappa == 1
            and builder.end_distance(sol) > opts.end_tolerance
        ):
            run.status = "horizon_short"
            run.events.append(RunEvent("horizon_short", len(run.steps) - 1, f"end distance {builder.end_distance(sol):.3g}"))
            return run
        if max_end is not None and builder.end_distance(sol) > max(max_end, 10 * end0):
            run.status = "stopped"
            run.events.append(RunEvent("basin_exit", len(run.steps) - 1))
            return run
        if its <= opts.fast_newton:
            step = min(step * opts.grow, opts.max_step)
    run.status = "max_steps"
    return run


# --------------------------------------------------------------------------
# public entry points


def _start_solution(builder: StablePathBvp, opts: HomotopyOptions, path: MeshSolution | None):
    p0 = np.zeros(builder.n_free)
    if builder.moving:
        p0[-1] = builder.T
    if path is None:
        sol = constant_solution(builder.target.point, p0, opts.initial_intervals, T=builder.T)
    else:
        sol = MeshSolution(path.mesh.copy(), path.y.copy(), path.ymid.copy(), p0, yp=None, T=builder.T)
    problem = builder.problem()
    disc = Discretization(problem, sol.mesh)
    r = disc.residual(sol.pack())
    if np.max(np.abs(r)) > 1e-8:
        raise SpecificationError(f"start solution violates the homotopy at kappa = 0 (residual {np.max(np.abs(r)):.2e})")
    return disc.solution(sol.pack(), T=builder.T)


def stable_path_homotopy(
    model: CanonicalModel,
    target: Equilibrium,
    x0,
    opts: HomotopyOptions | None = None,
    T: float | None = None,
    start_path: MeshSolution | None = None,
) -> ContinuationRun:
    """Continue the stable path of a saddle from its states toward ``x0``.

    Starts from the constant equilibrium solution (or from ``start_path``,
    an existing stable path of ``target``) at ``kappa = 0`` and continues
    until the initial states equal ``x0`` at ``kappa = 1``.

    Parameters
    ----------
    target : Equilibrium
        Must satisfy the saddle point property.
    x0 : array, length n
        Goal initial states.
    T : float, optional
        Horizon; defaults to ``T0 / min |Re mu_s|``.

    Returns
    -------
    ContinuationRun
        ``run.slice_manifold()`` gives the swept initial points.
    """
    opts = opts or HomotopyOptions()
    if not target.spp:
        raise SpecificationError("target does not satisfy the saddle point property; use stable_path_homotopy_nonspp")
    start = target.states if start_path is None else start_path.y[0, : model.n]
    builder = StablePathBvp(model, target, start, x0, T=T if T is not None or start_path is None else start_path.T, T0=opts.T0)
    sol0 = _start_solution(builder, opts, start_path)
    run = ContinuationRun("spp", builder, options=opts, meta={"T": builder.T})
    run = _run(run, sol0, None)
    if run.status == "horizon_short":
        used = len(run.steps) - 1
        rest = HomotopyOptions(**{**opts.__dict__, "max_steps": max(opts.max_steps - used, 1)})
        run = enable_moving_horizon(run, opts=rest)
    return run


def continue_path(
    model: CanonicalModel,
    target: Equilibrium,
    path: MeshSolution,
    x0,
    opts: HomotopyOptions | None = None,
) -> ContinuationRun:
    """Continue an existing stable path of ``target`` toward initial states ``x0``."""
    return stable_path_homotopy(model, target, x0, opts, start_path=path)


def stable_path_homotopy_nonspp(
    model: CanonicalModel,
    target: Equilibrium,
    x0,
    x1,
    free_vectors,
    opts: HomotopyOptions | None = None,
    T: float | None = None,
) -> ContinuationRun:
    """Stable path of a defective equilibrium on an affine family of initial states.

    Initial states are ``x0 + kappa_0 (x1 - x0) + sum_i kappa_i v_i``; the
    constant solution at ``x0 = states(target)`` starts the run.  With
    ``n - n_s`` free vectors the asymptotic condition spans the unstable
    directions only.

    Raises
    ------
    SpecificationError
        Rank condition violated or wrong number of free vectors.
    """
    opts = opts or HomotopyOptions()
    x0 = np.asarray(x0, float)
    if np.max(np.abs(x0 - target.states)) > 1e-10:
        raise SpecificationError("x0 must be the target's states (the run starts at the equilibrium)")
    builder = StablePathBvp(model, target, x0, x1, free_vectors=free_vectors, T=T, T0=opts.T0)
    sol0 = _start_solution(builder, opts, None)
    run = ContinuationRun("non_spp", builder, options=opts, meta={"T": builder.T})
    return _run(run, sol0, None)


def enable_moving_horizon(
    run: ContinuationRun,
    epsilon: float | None = None,
    opts: HomotopyOptions | None = None,
) -> ContinuationRun:
    """Continue ``run`` with the horizon free and a fixed end distance.

    ``epsilon`` defaults to ``|X(1) - Xhat|`` of the last accepted step, so
    the activation point already solves the extended problem.  Returns a new
    run containing the previous steps followed by the new ones.
    """
    old = run.builder
    if not isinstance(old, StablePathBvp) or old.moving:
        raise SpecificationError("moving horizon needs a fixed-horizon stable-path run")
    last = run.final
    eps = old.end_distance(last.solution) if epsilon is None else float(epsilon)
    if eps <= 1e-12:
        raise SpecificationError("end distance is zero; continue with a fixed horizon first")
    T_act = last.solution.T
    builder = StablePathBvp(
        old.model, old.target, old.start, old.goal,
        free_vectors=old.V.T if old.V.shape[1] else None, T=T_act, epsilon=eps,
    )
    opts = opts or run.options
    sol = last.solution
    sol0 = MeshSolution(sol.mesh.copy(), sol.y.copy(), sol.ymid.copy(), np.append(sol.p, T_act), T=T_act)
    problem = builder.problem()
    disc = Discretization(problem, sol0.mesh)
    sol0 = _set_T(builder, disc.solution(sol0.pack()))
    tprev = last.tangent
    direction = MeshSolution(tprev.mesh, tprev.y, tprev.ymid, np.append(tprev.p, 0.0))
    tan0 = tangent_solve(problem, sol0, direction)
    new = ContinuationRun(
        run.variant, builder, steps=list(run.steps), events=list(run.events), options=opts,
        meta=dict(run.meta, epsilon=eps, T_activation=T_act, moving_from_step=len(run.steps) - 1),
    )
    new.events.append(RunEvent("moving_horizon", len(run.steps) - 1, f"epsilon={eps:.6g}"))
    # restart the step record with the extended parameter vector
    new.steps[-1] = HomotopyStep(last.index, sol0, tan0, last.kappa, last.step_width, last.newton_iterations, last.admissible)
    return _run(new, sol0, tan0)


def solve_stable_path(model, target: Equilibrium, x0, guess: MeshSolution, opts: BvpOptions | None = None) -> MeshSolution:
    """Solve the determined stable-path problem for fixed initial states ``x0``.

    ``guess`` is a nearby path of the same target (its horizon is kept).
    """
    from .bvp import solve

    builder = StablePathBvp(model, target, guess.y[0, : model.n], x0, T=guess.T)
    problem = builder.problem()
    pin = BvpProblem(
        problem.dim, problem.n_free, problem.fun,
        lambda ya, yb, p: np.append(problem.bc(ya, yb, p), p[0] - 1.0),
        jac=problem.jac, jac_pattern=problem.jac_pattern, fun_p=problem.fun_p,
        bc_jac=lambda ya, yb, p: _append_pin(problem.bc_jac(ya, yb, p), problem.n_free),
        n_bc=problem.n_bc + 1,
    )
    init = MeshSolution(guess.mesh.copy(), guess.y.copy(), guess.ymid.copy(), np.ones(problem.n_free), T=guess.T)
    sol = solve(pin, init, opts)
    sol.T = guess.T
    return sol


def _append_pin(jacs, n_free):
    Ba, Bb, Bp = jacs
    row = np.zeros((1, n_free))
    row[0, 0] = 1.0
    return (
        np.vstack([Ba, np.zeros((1, Ba.shape[1]))]),
        np.vstack([Bb, np.zeros((1, Bb.shape[1]))]),
        np.vstack([Bp, row]),
    )


def continue_indifference_point(
    model: CanonicalModel,
    pair,
    targets,
    from_xI,
    to_xI,
    V,
    opts: HomotopyOptions | None = None,
) -> ContinuationRun:
    """Continue an indifference point along the line toward ``to_xI``.

    Parameters
    ----------
    pair : (MeshSolution, MeshSolution)
        Converged paths from ``from_xI`` to ``targets[0]`` and
        ``targets[1]``; their horizons are kept fixed.
    targets : (Equilibrium, Equilibrium)
        Two distinct saddle-point equilibria.
    V : array, length n
        Correction direction, independent of ``to_xI - from_xI``.

    Returns
    -------
    ContinuationRun
        Each step is an indifference point; ``kappa`` runs from 0 to 1.
    """
    opts = opts or HomotopyOptions()
    s1, s2 = pair
    n = model.n
    if np.max(np.abs(s1.y[0, :n] - s2.y[0, :n])) > 1e-8:
        raise SpecificationError("the two paths do not share their initial states")
    builder = IndifferenceBvp(model, targets, from_xI, to_xI, V, (s1.T, s2.T))
    gap = abs(model.hamiltonian(s1.y[0], check=False) - model.hamiltonian(s2.y[0], check=False))
    if gap > 1e-6:
        raise SpecificationError(f"Hamiltonians differ by {gap:.2e} at the starting point")
    problem = builder.problem()
    mesh = np.union1d(s1.mesh, s2.mesh)
    mesh = mesh[np.concatenate([[True], np.diff(mesh) > 1e-12])]
    r1 = remesh(_path_problem(model, targets[0], s1), s1, mesh)
    r2 = remesh(_path_problem(model, targets[1], s2), s2, mesh)
    sol0 = MeshSolution(mesh, np.hstack([r1.y, r2.y]), np.hstack([r1.ymid, r2.ymid]), np.zeros(2))
    disc = Discretization(problem, mesh)
    # re-converge on the common mesh with kappa_1 pinned at zero
    z = _pin_kappa(disc, sol0.pack(), 0, 0.0, opts)
    sol0 = disc.solution(z)
    opts_eff = opts
    if opts.max_end_distance is None:
        opts_eff = HomotopyOptions(**{**opts.__dict__, "max_end_distance": 1.0})
    run = ContinuationRun("indifference", builder, options=opts_eff, meta={"T": (s1.T, s2.T)})
    return _run(run, sol0, None)


def _path_problem(model, target, sol):
    T = sol.T
    return BvpProblem(model.dim, 0, lambda t, Y, p: T * _safe_rhs(model, Y), lambda ya, yb, p: np.zeros(0), n_bc=0)
