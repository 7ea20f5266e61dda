import numpy as np
import pytest

from mmvi.constraints import ConstraintSet
from mmvi.fieldtheory import SolitonParams, soliton, soliton_dt, soliton_dX
from mmvi.init import InitialProfile, solve_initial_positions, solve_initial_velocities
from mmvi.semidiscrete import DofState, MeshConfig

KINK = SolitonParams(12.5, 0.9)


def kink_profile(params=KINK):
    return InitialProfile(
        lambda X: soliton(X, 0.0, params),
        lambda X: soliton_dX(X, 0.0, params),
        lambda X: soliton_dt(X, 0.0, params),
    )


def random_state(rng, N, Xmax=None, min_frac=0.2, y_scale=1.0):
    """Random valid DofState; every cell is at least ``min_frac * dx`` wide."""
    Xmax = Xmax if Xmax is not None else float(N + 1)
    dx = Xmax / (N + 1)
    w = min_frac + rng.random(N + 1)
    X = np.concatenate([[0.0], np.cumsum(w)])
    X *= Xmax / X[-1]
    assert np.diff(X).min() > 0.1 * min_frac * dx
    y = y_scale * rng.standard_normal(N + 2)
    return DofState(y, X)


def nondegenerate_state(rng, N, gap=0.01, **kw):
    """Random state whose consecutive cell slopes differ by at least ``gap``."""
    while True:
        q = random_state(rng, N, **kw)
        if np.abs(np.diff(np.diff(q.y) / np.diff(q.X))).min() >= gap:
            return q


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def kink_setup():
    """Consistent single-kink data: alpha 2.5, N = 15, homotopy d = 10."""
    N = 15
    mesh = MeshConfig(N, 25.0, 0.0, 2 * np.pi)
    c = ConstraintSet.arclength(N, 2.5)
    profile = kink_profile()
    q = solve_initial_positions(profile, mesh, c, d=10)
    vel = solve_initial_velocities(q, profile, c)
    return mesh, c, profile, q, vel
