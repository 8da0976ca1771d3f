import numpy as np
import pytest

from skibapath.bvp import (
    BvpOptions,
    BvpProblem,
    Discretization,
    MeshSolution,
    constant_solution,
    estimate_residual,
    newton,
    solve,
    tangent_solve,
)
from skibapath.errors import DimensionError


def exp_problem():
    # y' = y, y(0) = 1 on [0, 1]
    return BvpProblem(1, 0, lambda t, Y, p: Y, lambda ya, yb, p: np.array([ya[0] - 1.0]))


def test_exponential():
    sol = solve(exp_problem(), constant_solution([1.0], [], 4), BvpOptions(abstol=1e-9, reltol=1e-9))
    assert sol.final[0] == pytest.approx(np.e, rel=1e-8)
    t = np.linspace(0, 1, 7)
    assert np.allclose(sol(t)[:, 0], np.exp(t), rtol=1e-7)


def test_free_parameter_eigenvalue():
    # y'' = -p y, y(0) = y(1) = 0, y'(0) = 1: p = pi^2
    f = lambda t, Y, p: np.stack([Y[:, 1], -p[0] * Y[:, 0]], axis=1)
    bc = lambda ya, yb, p: np.array([ya[0], yb[0], ya[1] - 1.0])
    pb = BvpProblem(2, 1, f, bc)
    M = 20
    mesh = np.linspace(0, 1, M + 1)
    mid = 0.5 * (mesh[1:] + mesh[:-1])
    g = lambda t: np.stack([np.sin(3 * t) / 3, np.cos(3 * t)], axis=1)
    guess = MeshSolution(mesh, g(mesh), g(mid), [9.0])
    sol = solve(pb, guess, BvpOptions(abstol=1e-8, reltol=1e-8))
    assert sol.p[0] == pytest.approx(np.pi**2, rel=1e-6)


def test_analytic_jacobian_matches_fd():
    f = lambda t, Y, p: np.stack([Y[:, 1], -np.exp(Y[:, 0])], axis=1)
    jac = lambda t, Y, p: np.stack(
        [
            np.stack([np.zeros(len(t)), np.ones(len(t))], axis=1),
            np.stack([-np.exp(Y[:, 0]), np.zeros(len(t))], axis=1),
        ],
        axis=1,
    )
    bc = lambda ya, yb, p: np.array([ya[0], yb[0]])
    a = Discretization(BvpProblem(2, 0, f, bc, jac=jac), np.linspace(0, 1, 9))
    b = Discretization(BvpProblem(2, 0, f, bc), np.linspace(0, 1, 9))
    z = np.random.default_rng(1).normal(size=a.size)
    assert np.allclose(a.jacobian(z).toarray(), b.jacobian(z).toarray(), atol=1e-6)


def test_residual_estimate_small_after_solve():
    pb = exp_problem()
    sol = solve(pb, constant_solution([1.0], [], 4))
    assert np.max(estimate_residual(pb, sol)) < 1e-3


def test_underdetermined_rejected():
    pb = BvpProblem(2, 0, lambda t, Y, p: Y, lambda ya, yb, p: np.array([ya[0]]))
    assert pb.deficiency == 1
    with pytest.raises(DimensionError):
        solve(pb, constant_solution([0.0, 0.0], [], 4))


def test_tangent_of_family():
    # y' = p y, y(0) = 1 leaves a family in (y, p); tangent is unit in the extended norm
    pb = BvpProblem(1, 1, lambda t, Y, p: p[0] * Y, lambda ya, yb, p: np.array([ya[0] - 1.0]))
    assert pb.deficiency == 1
    d = Discretization(pb, np.linspace(0, 1, 11))
    s0 = constant_solution([1.0], [0.0], 10)
    v = tangent_solve(pb, s0)
    # d/dp exp(p t) at p = 0 is t, scaled so that int t^2 + 1 = 1
    scale = 1.0 / np.sqrt(1.0 + 1.0 / 3.0)
    assert v.p[0] == pytest.approx(scale, rel=1e-6)
    assert np.allclose(v.y[:, 0], scale * d.mesh, atol=1e-8)


def test_mesh_validation():
    with pytest.raises(ValueError):
        MeshSolution(np.array([0.0, 0.0, 1.0]), np.zeros((3, 1)), np.zeros((2, 1)), [])
    with pytest.raises(DimensionError):
        MeshSolution(np.linspace(0, 1, 3), np.zeros((3, 1)), np.zeros((3, 1)), [])


def test_newton_converges_quadratically():
    f = lambda t, Y, p: np.stack([Y[:, 1], -np.exp(Y[:, 0])], axis=1)
    pb = BvpProblem(2, 0, f, lambda ya, yb, p: np.array([ya[0], yb[0]]))
    s0 = constant_solution([0.0, 0.0], [], 16)
    d = Discretization(pb, s0.mesh)
    z, it, res = newton(d, s0.pack(), tol=1e-13)
    assert it <= 6 and res < 1e-13
