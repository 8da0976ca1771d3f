import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import fd_jacobian, lake0d_equilibria, trapezoid_weights

from skibapath import SCENARIO_I, SCENARIO_II, DiffusionOperators, ModelParams, ShallowLake0D, ShallowLake1D, make_model
from skibapath.errors import AdmissibilityError, DimensionError, SingularControlError

pos = st.floats(0.05, 3.0)
neg = st.floats(-30.0, -0.05)


@settings(max_examples=40, deadline=None)
@given(P=pos, lam=neg, b=st.floats(0.4, 0.9), c=st.floats(0.1, 4.0))
def test_jacobian_0d_matches_fd(P, lam, b, c):
    m = ShallowLake0D(ModelParams(rho=0.03, b=b, c=c))
    X = np.array([P, lam])
    assert np.allclose(m.jacobian(X), fd_jacobian(m.rhs, X), rtol=1e-6, atol=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.tuples(pos, neg), min_size=6, max_size=6))
def test_jacobian_1d_matches_fd(nodes):
    m = ShallowLake1D(SCENARIO_I.replace(N=5))
    P, lam = map(np.array, zip(*nodes))
    X = np.concatenate([P, lam])
    J = m.jacobian(X)
    assert np.max(np.abs(J - fd_jacobian(m.rhs, X))) < 1e-6 * max(1.0, np.max(np.abs(J)))


def test_sparsity_pattern_covers_jacobian():
    m = ShallowLake1D(SCENARIO_I.replace(N=7))
    rows, cols = m.jac_sparsity
    X = np.concatenate([np.linspace(0.4, 1.2, m.n), -np.linspace(2, 6, m.n)])
    J = m.jacobian(X)
    mask = np.zeros_like(J, bool)
    mask[rows, cols] = True
    assert np.all(J[~mask] == 0)


@pytest.mark.parametrize("N", [2, 3, 10, 51])
def test_operators(N):
    ops = DiffusionOperators.build(N)
    assert ops.A_state.shape == (N + 1, N + 1)
    assert np.array_equal(ops.A_costate, ops.A_state.T)
    assert np.all(ops.A_state.sum(axis=1) == 0)
    assert np.isclose(ops.w.sum(), 1.0)
    assert np.allclose(ops.w, trapezoid_weights(N))


def test_operator_needs_two_intervals():
    with pytest.raises(ValueError):
        DiffusionOperators.build(1)


def test_0d_equilibria_satisfy_rhs():
    for p in (SCENARIO_I, SCENARIO_II):
        m = ShallowLake0D(p)
        for P, lam in lake0d_equilibria(p.rho, p.b, p.c):
            assert np.max(np.abs(m.rhs(np.array([P, lam])))) < 1e-10


def test_hamiltonian_at_equilibrium_is_payoff():
    p = SCENARIO_I
    m = ShallowLake0D(p)
    for P, lam in lake0d_equilibria(p.rho, p.b, p.c):
        X = np.array([P, lam])
        assert np.isclose(m.hamiltonian(X), m.running_payoff(X), rtol=1e-12)


def test_hamiltonian_gradient_fd():
    m = ShallowLake1D(SCENARIO_I.replace(N=4))
    X = np.concatenate([np.linspace(0.5, 1.0, 5), -np.linspace(3, 5, 5)])
    g = m.hamiltonian_gradient(X)
    gfd = fd_jacobian(lambda x: np.atleast_1d(m.hamiltonian(x)), X)[0]
    assert np.allclose(g, gfd, rtol=1e-6, atol=1e-8)


def test_flat_profile_has_no_diffusion():
    m = ShallowLake1D(SCENARIO_I.replace(N=9))
    P = np.full(m.n, 0.7)
    assert np.allclose(m._diffuse_state(P), 0.0)


def test_batch_rhs_matches_loop():
    m = ShallowLake1D(SCENARIO_I.replace(N=4))
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.uniform(0.2, 1.5, (3, m.n)), -rng.uniform(1, 9, (3, m.n))], axis=1)
    batch = m.rhs(X)
    assert np.allclose(batch, np.array([m.rhs(x) for x in X]))


def test_admissibility_checks():
    m = ShallowLake0D(SCENARIO_I)
    assert m.is_admissible(np.array([0.5, -3.0]))
    assert not m.is_admissible(np.array([-0.5, -3.0]))
    with pytest.raises(AdmissibilityError):
        m.check_admissible(np.array([0.5, 1.0]))
    with pytest.raises(SingularControlError):
        m.control(np.array([0.5, 0.0]))
    with pytest.raises(AdmissibilityError):
        m.rhs(np.array([0.5, 0.0]))


def test_dimension_errors():
    m = ShallowLake1D(SCENARIO_I.replace(N=4))
    with pytest.raises(DimensionError):
        m.rhs(np.zeros(7))
    with pytest.raises(DimensionError):
        m.spatial_norm(np.ones(3))


@pytest.mark.parametrize("bad", [dict(rho=0), dict(c=-1), dict(D=-0.1), dict(L=0), dict(N=0)])
def test_param_validation(bad):
    kw = dict(rho=0.03, b=0.65, c=0.5)
    kw.update(bad)
    with pytest.raises(ValueError):
        ModelParams(**kw)


def test_make_model_dispatch():
    assert isinstance(make_model(SCENARIO_I), ShallowLake0D)
    assert isinstance(make_model(SCENARIO_I.replace(N=5)), ShallowLake1D)


@pytest.mark.parametrize("name", ["b", "c", "rho", "D"])
def test_param_derivative_fd(name):
    p = SCENARIO_I.replace(N=4)
    m = make_model(p)
    X = np.concatenate([np.linspace(0.5, 1.0, 5), -np.linspace(3, 5, 5)])
    h = 1e-6
    v = getattr(p, name)
    fd = (make_model(p.replace(**{name: v + h})).rhs(X) - make_model(p.replace(**{name: v - h})).rhs(X)) / (2 * h)
    assert np.allclose(m.param_derivative(X, name), fd, atol=1e-6)


def test_spatial_norm_of_constant():
    m = ShallowLake1D(SCENARIO_I.replace(N=8))
    assert np.isclose(m.spatial_norm(np.full(m.n, -2.5)), 2.5)
