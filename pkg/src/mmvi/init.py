"""Consistent initial data: positions, velocities, momenta and multipliers."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import constraints as cons
from .constraints import ConstraintSet
from .errors import NoConvergence
from .fieldtheory import DensitySpec, sine_gordon
from .semidiscrete import DofState, MeshConfig, VelocityState
from .solver import BandedMatrix, NewtonOptions, lu_banded_solve, newton_solve

log = logging.getLogger(__name__)

CT = "CT"
LM = "LM"


@dataclass
class InitialProfile:
    """Initial field ``a(X)``, its slope ``aprime`` and velocity ``b(X)``.

    ``aprime`` falls back to a centered difference with step 1e-6 and ``b``
    to zero.
    """

    a: Callable
    aprime: Optional[Callable] = None
    b: Optional[Callable] = None

    def slope(self, X):
        if self.aprime is not None:
            return np.asarray(self.aprime(X), dtype=float)
        h = 1e-6
        return (np.asarray(self.a(X + h)) - np.asarray(self.a(X - h))) / (2 * h)

    def velocity(self, X):
        if self.b is None:
            return np.zeros_like(np.asarray(X, dtype=float))
        return np.asarray(self.b(X), dtype=float)


def _interleave_rows(top, bottom):
    """Stack two N x 2N sparse blocks so their rows alternate."""
    N = top.shape[0]
    out = sp.vstack([top, bottom]).tocsr()
    perm = np.empty(2 * N, dtype=int)
    perm[0::2] = np.arange(N)
    perm[1::2] = N + np.arange(N)
    return out[perm]


def _interpolation_block(slope):
    """Rows d(y_i - a(X_i)) with respect to interleaved (y, X)."""
    N = slope.size
    i = np.arange(N)
    return sp.csr_matrix(
        (np.concatenate([np.ones(N), -slope]), (np.concatenate([i, i]), np.concatenate([2 * i, 2 * i + 1]))),
        shape=(N, 2 * N),
    )


def position_residuals(q: DofState, profile: InitialProfile, c: ConstraintSet):
    """(y_i - a(X_i), g_i) for the interior nodes."""
    return q.y[1:-1] - np.asarray(profile.a(q.X[1:-1])), cons.g(q, c)


def solve_initial_positions(profile: InitialProfile, mesh: MeshConfig, c: ConstraintSet,
                            d: int = 10, opts: NewtonOptions | None = None) -> DofState:
    """Solve y_i = a(X_i), g_i = 0 by continuation in alpha from a uniform mesh.

    Stage k uses alpha_k = (k / d) alpha and starts from the stage k-1 result.
    """
    if d < 1:
        raise ValueError("homotopy needs d >= 1")
    opts = opts or NewtonOptions()
    X = mesh.uniform_X()
    y = np.asarray(profile.a(X), dtype=float).copy()
    y[0], y[-1] = mesh.yL, mesh.yR
    q = DofState(y, X)
    if c.is_uniform:
        stages = [c]
    else:
        stages = [ConstraintSet.arclength(c.N, c.alpha * k / d) for k in range(1, d + 1)]
    iterations = []
    for k, ck in enumerate(stages, start=1):

        def F(z, ck=ck):
            qz = q.with_interior(z)
            out = np.empty_like(z)
            out[0::2], out[1::2] = position_residuals(qz, profile, ck)
            return out

        def J(z, ck=ck):
            qz = q.with_interior(z)
            A = _interleave_rows(_interpolation_block(profile.slope(qz.X[1:-1])), cons.jacobian_Dg(qz, ck))
            return BandedMatrix.from_sparse(A, 3, 3)

        try:
            res = newton_solve(F, J, q.interior(), opts)
        except NoConvergence as exc:
            exc.details["homotopy_stage"] = k
            raise NoConvergence(
                f"initial positions: homotopy stage {k}/{len(stages)} failed; try a larger d",
                **exc.details,
            ) from exc
        iterations.append(res.iterations)
        q = q.with_interior(res.x)
    log.debug("homotopy Newton iterations per stage: %s", iterations)
    q.homotopy_iterations = iterations
    return q


def velocity_system(q: DofState, profile: InitialProfile, c: ConstraintSet):
    """Banded matrix and right-hand side of the initial velocity equations."""
    N = q.N
    Xi = q.X[1:-1]
    A = _interleave_rows(_interpolation_block(profile.slope(Xi)), cons.jacobian_Dg(q, c))
    rhs = np.zeros(2 * N)
    rhs[0::2] = profile.velocity(Xi)
    return BandedMatrix.from_sparse(A, 3, 3), rhs


def solve_initial_velocities(q: DofState, profile: InitialProfile, c: ConstraintSet) -> VelocityState:
    """ydot_i - a'(X_i) Xdot_i = b(X_i) together with Dg u = 0."""
    A, rhs = velocity_system(q, profile, c)
    return VelocityState.from_interior(lu_banded_solve(A, rhs))


def initial_phase(q: DofState, vel: VelocityState, strategy: str, c: ConstraintSet,
                  density: DensitySpec = sine_gordon):
    """Phase-space starting state for the chosen strategy."""
    u = vel.interior()
    if strategy == CT:
        from .integrator_ct import CtState, momenta_from_velocity

        return CtState(0.0, q.copy(), momenta_from_velocity(q, u, density), u.copy())
    if strategy == LM:
        from .integrator_lm import lm_initial_state

        return lm_initial_state(q.copy(), u, c, density)
    raise ValueError(f"unknown strategy {strategy!r}")
