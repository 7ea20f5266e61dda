import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_state
from mmvi.constraints import (
    ConstraintSet,
    g,
    hessian_contraction_h,
    hessian_weighted,
    jacobian_Dg,
    solve_constraint_for_X,
)
from mmvi.semidiscrete import DofState


def test_g_examples():
    X = np.linspace(0, 4, 7)
    np.testing.assert_allclose(g(DofState(0.3 * X, X), ConstraintSet.arclength(5, 1.7)), 0.0, atol=1e-14)
    c = ConstraintSet.arclength(1, 1.0)
    assert g(DofState([0, 1, 0], [0, 1, 2]), c)[0] == 0.0
    assert g(DofState([0, 1, 0], [0, 0.5, 2]), c)[0] == pytest.approx(2.0)


def test_symmetric_example_jacobian_row():
    Dg = jacobian_Dg(DofState([0, 1, 0], [0, 1, 2]), ConstraintSet.arclength(1, 1.0)).toarray()
    np.testing.assert_allclose(Dg, [[0.0, -4.0]])


def test_uniform_constraint_rows_are_constant(rng):
    c = ConstraintSet.uniform(4)
    q1, q2 = random_state(rng, 4, Xmax=5.0), random_state(rng, 4, Xmax=5.0)
    D1, D2 = jacobian_Dg(q1, c).toarray(), jacobian_Dg(q2, c).toarray()
    np.testing.assert_array_equal(D1, D2)
    assert set(np.unique(D1)) == {-1.0, 0.0, 1.0}
    X = np.linspace(0, 5, 6)
    np.testing.assert_allclose(g(DofState(np.sin(X), X), c), 0.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.0, 3.0))
def test_Dg_matches_finite_differences(seed, alpha):
    r = np.random.default_rng(seed)
    q = random_state(r, 5)
    c = ConstraintSet.arclength(5, alpha)
    z = q.interior()
    h = 1e-6
    fd = np.column_stack([
        (g(q.with_interior(z + h * e), c) - g(q.with_interior(z - h * e), c)) / (2 * h) for e in np.eye(10)
    ])
    np.testing.assert_allclose(jacobian_Dg(q, c).toarray(), fd, atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_h_matches_second_differences(seed):
    r = np.random.default_rng(seed)
    q = random_state(r, 5)
    c = ConstraintSet.arclength(5, 2.5)
    u = r.standard_normal(10)
    z = q.interior()
    t = 1e-3
    second = (g(q.with_interior(z + t * u), c) - 2 * g(q, c) + g(q.with_interior(z - t * u), c)) / t**2
    np.testing.assert_allclose(hessian_contraction_h(q, u, c), -second, atol=1e-6)
    np.testing.assert_allclose(hessian_contraction_h(q, 2 * u, c), 4 * hessian_contraction_h(q, u, c), rtol=1e-14)
    np.testing.assert_array_equal(hessian_contraction_h(q, np.zeros(10), c), 0.0)


def test_hessian_weighted_matches_contraction(rng):
    c = ConstraintSet.arclength(6, 1.3)
    q = random_state(rng, 6)
    u, w = rng.standard_normal(12), rng.standard_normal(6)
    H = hessian_weighted(c, w).toarray()
    assert u @ H @ u == pytest.approx(-w @ hessian_contraction_h(q, u, c), rel=1e-12)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
def test_solve_for_X_linear_field_gives_uniform_mesh(alpha, rng):
    N = 9
    Xu = np.linspace(0, 10, N + 2)
    y = 0.4 * Xu
    guess = np.sort(rng.uniform(0.5, 9.5, N))
    X = solve_constraint_for_X(y, ConstraintSet.arclength(N, alpha), guess, Xmax=10.0)
    np.testing.assert_allclose(X, Xu[1:-1], atol=1e-9)


def test_solve_for_X_alpha_zero_ignores_field(rng):
    N = 7
    y = rng.standard_normal(N + 2)
    X = solve_constraint_for_X(y, ConstraintSet.arclength(N, 0.0), np.linspace(0, 8, N + 2))
    np.testing.assert_allclose(X, np.arange(1, N + 1), atol=1e-9)


def test_solve_for_X_soliton_profile(kink_setup):
    mesh, c, _, q, _ = kink_setup
    X = solve_constraint_for_X(q.y, c, mesh.uniform_X())
    Xf = np.concatenate([[0.0], X, [mesh.Xmax]])
    assert np.abs(g(DofState(q.y, Xf), c)).max() < 1e-10
    assert np.all(np.diff(Xf) > 0)
    np.testing.assert_allclose(X, q.X[1:-1], atol=1e-8)


def test_solve_for_X_rejects_non_monotone_guess():
    from mmvi.errors import MeshCrossing

    with pytest.raises(MeshCrossing):
        solve_constraint_for_X(np.zeros(4), ConstraintSet.arclength(2, 1.0), [2.0, 1.0], Xmax=3.0)


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet("spline", 3)
    with pytest.raises(ValueError):
        ConstraintSet.arclength(3, -1.0)
