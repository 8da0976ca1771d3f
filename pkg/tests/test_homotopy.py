import numpy as np
import pytest

from skibapath import SCENARIO_I, ShallowLake0D
from skibapath.equilibrium import equilibria_0d
from skibapath.errors import SpecificationError
from skibapath.homotopy import (
    HomotopyOptions,
    StablePathBvp,
    continue_path,
    enable_moving_horizon,
    stable_path_homotopy,
    stable_path_homotopy_nonspp,
)


@pytest.fixture(scope="module")
def lake():
    m = ShallowLake0D(SCENARIO_I)
    return m, equilibria_0d(m)


@pytest.fixture(scope="module")
def short_run(lake):
    m, (lo, mid, hi) = lake
    return stable_path_homotopy(m, lo, lo.states + 0.1)


def test_run_reaches_goal(lake, short_run):
    m, (lo, _, _) = lake
    run = short_run
    assert run.target_hit
    assert run.kappas[0] == 0.0 and run.kappas[-1] == pytest.approx(1.0, abs=1e-12)
    sol = run.final.solution
    assert sol.y[0, 0] == pytest.approx(lo.states[0] + 0.1, abs=1e-10)
    assert np.all(sol.y[:, 1] < 0)


def test_path_solves_canonical_system(lake, short_run):
    m, _ = lake
    sol = short_run.final.solution
    # collocation midpoints agree with the Hermite interpolant
    mid = 0.5 * (sol.mesh[1:] + sol.mesh[:-1])
    assert np.allclose(sol(mid), sol.ymid, atol=1e-8)
    d = np.diff(sol.y, axis=0) / np.diff(sol.mesh)[:, None]
    f = sol.T * m.rhs(sol.ymid)
    assert np.max(np.abs(d - f)) < 1e-2 * max(1.0, np.max(np.abs(f)))


def test_slice_manifold_starts_at_equilibrium(lake, short_run):
    m, (lo, _, _) = lake
    sm = short_run.slice_manifold("lo")
    assert len(sm.kappa) == len(short_run.steps) and sm.n == m.n
    assert np.allclose(sm.initial_points[0], lo.point, atol=1e-10)
    assert sm.objective[0] == pytest.approx(m.hamiltonian(lo.point) / m.params.rho, rel=1e-6)
    assert np.all(np.diff(sm.arclength) >= 0)


def test_continue_path_extends(lake, short_run):
    m, (lo, _, _) = lake
    run = continue_path(m, lo, short_run.final.solution, lo.states + 0.15)
    assert run.target_hit
    assert run.final.solution.y[0, 0] == pytest.approx(lo.states[0] + 0.15, abs=1e-10)


def test_moving_horizon_keeps_end_distance(lake, short_run):
    m, (lo, _, _) = lake
    run = enable_moving_horizon(short_run, opts=HomotopyOptions(max_steps=4))
    eps = run.meta["epsilon"]
    assert "moving_horizon" in run.event_kinds()
    for st in run.steps[run.meta["moving_from_step"] + 1 :]:
        assert run.builder.end_distance(st.solution) == pytest.approx(eps, rel=1e-6)


def test_spp_required(lake):
    m, (_, mid, _) = lake
    with pytest.raises(SpecificationError):
        stable_path_homotopy(m, mid, mid.states + 0.1)


def test_nonspp_free_vector_count(lake):
    m, (_, mid, _) = lake
    need = m.n - mid.spectral.n_s
    assert need == 1
    with pytest.raises(SpecificationError):
        stable_path_homotopy_nonspp(m, mid, mid.states, mid.states + 0.1, None)


def test_nonspp_rank_condition(lake):
    m, (_, mid, _) = lake
    with pytest.raises(SpecificationError, match="rank"):
        StablePathBvp(m, mid, mid.states, mid.states + 0.1, free_vectors=[[1.0]])


def test_nonspp_start_must_be_target(lake):
    m, (lo, mid, _) = lake
    with pytest.raises(SpecificationError):
        stable_path_homotopy_nonspp(m, mid, lo.states, mid.states, [[1.0]])


def test_moving_horizon_needs_fixed_run(lake, short_run):
    run = enable_moving_horizon(short_run, opts=HomotopyOptions(max_steps=1))
    with pytest.raises(SpecificationError):
        enable_moving_horizon(run)
