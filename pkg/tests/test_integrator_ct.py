import numpy as np
import pytest

from mmvi.constraints import ConstraintSet
from mmvi.errors import NoConvergence
from mmvi.init import CT, initial_phase, solve_initial_positions, solve_initial_velocities
from mmvi.integrator_ct import (
    CtState,
    ct_integrate,
    ct_step,
    momenta_from_velocity,
    prk_frozen_mesh_step,
    velocity_from_momenta,
)
from mmvi.semidiscrete import DofState, MeshConfig, discrete_energy
from mmvi.solver import NewtonOptions
from mmvi.tableaus import get_tableau

from conftest import kink_profile


def vacuum_state(N=7, Xmax=8.0):
    X = np.linspace(0, Xmax, N + 2)
    return CtState(0.0, DofState(np.zeros(N + 2), X), np.zeros(N), np.zeros(2 * N))


@pytest.fixture(scope="module")
def ct_kink(kink_setup):
    _, c, _, q, vel = kink_setup
    return initial_phase(q, vel, CT, c), c


@pytest.mark.parametrize("name", ["Gauss1", "Gauss2", "Lobatto3", "Radau3"])
def test_vacuum_is_stationary(name):
    st = vacuum_state()
    c = ConstraintSet.arclength(7, 2.5)
    traj = ct_integrate(st, 0.1, 5, get_tableau(name), c)
    np.testing.assert_array_equal(traj.final_state.q.y, st.q.y)
    np.testing.assert_allclose(traj.final_state.q.X, st.q.X, atol=1e-14)
    assert np.abs(traj.column("g_norm")).max() < 1e-14
    assert np.ptp(traj.energy) <= 1e-13


def test_zero_steps_returns_initial_record(ct_kink):
    st, c = ct_kink
    traj = ct_integrate(st, 0.01, 0, get_tableau("Gauss1"), c)
    assert len(traj.records) == 1
    assert traj.records[0].t == 0.0
    np.testing.assert_array_equal(traj.records[0].y, st.q.y)


def test_momentum_velocity_round_trip(ct_kink):
    st, c = ct_kink
    u = velocity_from_momenta(st.q, st.p, c)
    np.testing.assert_allclose(u, st.u, atol=1e-12)
    np.testing.assert_allclose(momenta_from_velocity(st.q, u), st.p, atol=1e-13)


@pytest.mark.parametrize("name", ["Gauss1", "Gauss2"])
def test_dae_and_frozen_mesh_prk_agree(ct_kink, name):
    st, c = ct_kink
    tab = get_tableau(name)
    for _ in range(3):
        nxt = ct_step(st, 0.01, tab, c)
        y1, p1, _ = prk_frozen_mesh_step(st, 0.01, tab, nxt.stages.Q, nxt.stages.Qdot)
        np.testing.assert_allclose(y1, nxt.q.y[1:-1], rtol=0, atol=1e-12)
        np.testing.assert_allclose(p1, nxt.p, rtol=0, atol=1e-12)
        st = nxt


def test_constraint_held_after_every_step(ct_kink):
    st, c = ct_kink
    traj = ct_integrate(st, 0.01, 20, get_tableau("Gauss2"), c)
    assert traj.column("g_norm").max() <= 10 * NewtonOptions().tol_residual
    assert np.all(np.diff(traj.X, axis=1) > 0)
    for rec in traj.records[::5]:
        q = DofState(rec.y, rec.X)
        assert rec.E_N == pytest.approx(discrete_energy(q, rec.u), abs=1e-12)


def _uniform_kink(N=15):
    mesh = MeshConfig(N, 25.0, 0.0, 2 * np.pi)
    c = ConstraintSet.uniform(N)
    q = solve_initial_positions(kink_profile(), mesh, c)
    return initial_phase(q, solve_initial_velocities(q, kink_profile(), c), CT, c), c


def test_gauss1_reversible_on_fixed_mesh():
    st, c = _uniform_kink()
    tab = get_tableau("Gauss1")
    opts = NewtonOptions(tol_residual=1e-13)
    fwd = ct_step(st, 0.05, tab, c, opts=opts)
    fwd.stages = None
    back = ct_step(fwd, -0.05, tab, c, opts=opts)
    np.testing.assert_allclose(back.q.y, st.q.y, rtol=0, atol=1e-12)
    np.testing.assert_allclose(back.p, st.p, rtol=0, atol=1e-12)
    vac = vacuum_state()
    cu = ConstraintSet.uniform(7)
    there = ct_step(vac, 0.05, tab, cu)
    back = ct_step(there, -0.05, tab, cu)
    np.testing.assert_allclose(back.q.y, vac.q.y, atol=1e-12)


def test_uniform_mesh_conserves_energy_closely():
    st, c = _uniform_kink()
    traj = ct_integrate(st, 0.01, 100, get_tableau("Gauss2"), c)
    E = traj.energy
    assert np.abs(E - E[0]).max() < 1e-6 * abs(E[0])
    np.testing.assert_array_equal(traj.X[-1], traj.X[0])


def test_failure_carries_step_and_partial_trajectory(ct_kink):
    st, c = ct_kink
    opts = NewtonOptions(max_iters=1, tol_residual=1e-15, tol_step=1e-16)
    with pytest.raises(NoConvergence) as info:
        ct_integrate(st, 0.05, 3, get_tableau("Gauss2"), c, opts=opts)
    assert info.value.step == 1
    assert len(info.value.trajectory.records) == 1
    assert info.value.trajectory.failed_step == 1


def test_zero_dt_rejected(ct_kink):
    st, c = ct_kink
    with pytest.raises(ValueError):
        ct_step(st, 0.0, get_tableau("Gauss1"), c)
