from types import SimpleNamespace

import numpy as np
import pytest

from skibapath import SCENARIO_I, ShallowLake0D
from skibapath.analysis import (
    NotIntersectingError,
    SliceManifold,
    classify_structure,
    comparable,
    find_indifference_point,
    objective_by_quadrature,
    stall_point,
)
from skibapath.bvp import constant_solution
from skibapath.equilibrium import equilibria_0d
from skibapath.errors import SpecificationError


def synthetic(start, goal, alphas, objective):
    start, goal = np.atleast_1d(np.asarray(start, float)), np.atleast_1d(np.asarray(goal, float))
    a = np.asarray(alphas, float)
    states = start + np.outer(a, goal - start)
    pts = np.concatenate([states, -np.ones_like(states)], axis=1)
    return SliceManifold(
        arclength=np.abs(a - a[0]),
        kappa=a,
        initial_points=pts,
        objective=np.asarray(objective, float),
        admissible=np.ones(len(a), bool),
        start=start,
        goal=goal,
    )


def test_comparable_lines():
    a = synthetic([0.0, 0.0], [1.0, 1.0], [0, 0.5], [0, 0])
    b = synthetic([2.0, 2.0], [-1.0, -1.0], [0, 0.5], [0, 0])
    c = synthetic([0.0, 1.0], [1.0, 2.0], [0, 0.5], [0, 0])
    assert comparable(a, b)
    assert not comparable(a, c)
    with pytest.raises(SpecificationError):
        comparable(a, synthetic([1.0, 1.0], [1.0, 1.0], [0, 1], [0, 0]))


def test_crossing_of_linear_objectives():
    al = np.linspace(0, 1, 11)
    a = synthetic(0.0, 1.0, al, -1.0 + 2.0 * al)  # increasing
    b = synthetic(1.0, 0.0, al, -0.6 + 1.0 * al)  # seen from the other end
    ip = find_indifference_point(a, b, resolve=False)
    # -1 + 2 x = -0.6 + (1 - x)  =>  x = 1.4 / 3
    assert ip.alpha == pytest.approx(1.4 / 3, abs=1e-12)
    assert ip.objectives[0] == pytest.approx(ip.objectives[1], abs=1e-12)
    assert ip.classification == "homogeneous"


def test_no_crossing_returns_none():
    al = np.linspace(0, 1, 5)
    a = synthetic(0.0, 1.0, al, np.ones(5))
    b = synthetic(1.0, 0.0, al, np.zeros(5))
    assert find_indifference_point(a, b, resolve=False) is None


def test_disjoint_manifolds():
    a = synthetic(0.0, 1.0, [0, 0.2, 0.3], [0, 0, 0])
    b = synthetic(1.0, 0.0, [0, 0.2, 0.3], [0, 0, 0])
    with pytest.raises(NotIntersectingError):
        find_indifference_point(a, b, resolve=False)


def test_monotone_prefix_stops_at_fold():
    sm = synthetic(0.0, 1.0, [0, 0.2, 0.5, 0.4, 0.1], np.zeros(5))
    a = sm.line_parameter(sm.start, sm.direction)
    assert sm.monotone_prefix(a) == slice(0, 3)


def test_quadrature_of_resting_path():
    m = ShallowLake0D(SCENARIO_I)
    for e in equilibria_0d(m):
        sol = constant_solution(e.point, [], 40, T=200.0)
        q = objective_by_quadrature(m, sol)
        assert q == pytest.approx(m.hamiltonian(e.point) / m.params.rho, rel=1e-10)


def test_quadrature_needs_horizon():
    m = ShallowLake0D(SCENARIO_I)
    with pytest.raises(SpecificationError):
        objective_by_quadrature(m, constant_solution([0.5, -3.0], [], 4))


def _fake_run(kappas, Ts, status="running"):
    steps = [
        SimpleNamespace(kappa=k, solution=SimpleNamespace(T=T, y=np.array([[0.3 + k, -2.0]])))
        for k, T in zip(kappas, Ts)
    ]
    return SimpleNamespace(steps=steps, target_hit=False, status=status, model=SimpleNamespace(n=1))


def test_stall_detection():
    k = [0.1, 0.3, 0.45, 0.4801, 0.4802, 0.4803, 0.4804, 0.4805, 0.4806]
    T = np.linspace(50, 400, len(k))
    kappa, x = stall_point(_fake_run(k, T))
    assert kappa == pytest.approx(0.4806)
    assert x[0] == pytest.approx(0.7806)
    # still moving
    assert stall_point(_fake_run(np.linspace(0, 0.8, 9), T)) is None
    # flat kappa but the horizon does not grow
    assert stall_point(_fake_run(k, np.full(len(k), 50.0))) is None
    # reported stall wins
    assert stall_point(_fake_run([0.1, 0.2], [1, 1], status="stall"))[0] == 0.2


def test_single_equilibrium_is_unique():
    m = ShallowLake0D(SCENARIO_I.replace(b=0.8))
    assert classify_structure(m, equilibria_0d(m), []).kind == "unique"
