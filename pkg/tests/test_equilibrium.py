import numpy as np
import pytest
from oracles import lake0d_equilibria, lake0d_fold

from skibapath import SCENARIO_I, SCENARIO_II, ShallowLake0D, ShallowLake1D, make_model
from skibapath.equilibrium import (
    ContinuationOptions,
    continue_equilibria,
    equilibria_0d,
    equilibria_at,
    lift_flat,
    merge_equilibria,
    newton_solve,
)
from skibapath.errors import NonConvergenceError


@pytest.mark.parametrize("params", [SCENARIO_I, SCENARIO_II, SCENARIO_I.replace(b=0.75)])
def test_equilibria_0d_match_oracle(params):
    eqs = equilibria_0d(ShallowLake0D(params))
    ref = lake0d_equilibria(params.rho, params.b, params.c)
    assert len(eqs) == len(ref)
    for e, (P, lam) in zip(eqs, ref):
        assert e.point == pytest.approx([P, lam], rel=1e-10)
        assert e.residual_norm < 1e-12


def test_newton_converges_from_nearby():
    m = ShallowLake0D(SCENARIO_I)
    P, lam = lake0d_equilibria(0.03, 0.65, 0.5)[0]
    e = newton_solve(m, [P * 1.1, lam * 0.9])
    assert e.point == pytest.approx([P, lam], rel=1e-10)


def test_newton_gives_up():
    m = ShallowLake0D(SCENARIO_I)
    with pytest.raises(NonConvergenceError):
        newton_solve(m, [0.5, -3.0], max_iter=1)


def test_lift_is_flat_equilibrium():
    p1 = SCENARIO_I.replace(N=12)
    m = ShallowLake1D(p1)
    for e0 in equilibria_0d(ShallowLake0D(SCENARIO_I)):
        X = lift_flat(e0, p1)
        e = newton_solve(m, X)
        assert np.allclose(e.point, X, atol=1e-10)
        assert e.flat and e.kind().startswith("flat-")
        assert e.spp == e0.spp


def test_merge_removes_duplicates():
    eqs = equilibria_0d(ShallowLake0D(SCENARIO_I))
    assert len(merge_equilibria(eqs + eqs)) == len(eqs)


@pytest.fixture(scope="module")
def b_branches():
    m = ShallowLake0D(SCENARIO_I)
    eqs = equilibria_0d(m)
    opts = ContinuationOptions(bounds=(0.3, 1.0), max_points=2000)
    # the middle branch escapes toward zero control, so seed from both outer ones
    return [continue_equilibria(m, e, "b", opts, direction=d) for e in (eqs[0], eqs[-1]) for d in (1.0, -1.0)]


def test_single_fold_in_b_matches_oracle(b_branches):
    # the middle branch leaves through the zero-control boundary, not a second fold
    folds = sorted(e.parameter_value for br in b_branches for e in br.folds())
    assert len(folds) == 1
    _, b_ref = lake0d_fold(0.03, 0.5, "b", (0.7, folds[0]))
    assert folds[0] == pytest.approx(b_ref, abs=1e-6)


@pytest.mark.parametrize("b", [0.6, 0.65, 0.7, 0.8])
def test_equilibria_at_recovers_census(b_branches, b):
    found = equilibria_at(b_branches, b)
    ref = lake0d_equilibria(0.03, b, 0.5)
    assert len(found) == len(ref)
    got = np.sort([e.point[0] for e in found])
    assert np.allclose(got, [P for P, _ in ref], rtol=1e-9)


def test_mirror_of_flat_is_itself():
    m = make_model(SCENARIO_I.replace(N=6))
    e = newton_solve(m, lift_flat(equilibria_0d(ShallowLake0D(SCENARIO_I))[0], m.params))
    assert e.mirror_symmetric
