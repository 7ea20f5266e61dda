"""Control-theoretic strategy: partitioned RK on the index-1 mesh DAE.

The field values y carry conjugate momenta p = dL_N/d(ydot); the mesh X is
slaved to y through g(y, X) = 0.  Every stage carries unknowns
(Ydot^i, Q^i, Qdot^i) and satisfies

    dL/d(ydot)(Y^i, Q^i, Ydot^i, Qdot^i) = p^n + h sum_j abar_ij dL/dy(stage j)
    g(Y^i, Q^i) = 0
    g_y Ydot^i + g_X Qdot^i = 0

with Y^i = y^n + h sum_j a_ij Ydot^j.  After the stage solve,
y^{n+1} and p^{n+1} follow from the weights b and bbar and X^{n+1} from
g(y^{n+1}, X^{n+1}) = 0.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import constraints as cons
from .constraints import ConstraintSet
from .errors import NumericalFailure
from .fieldtheory import DensitySpec, sine_gordon
from .semidiscrete import DofState, discrete_energy, lagrangian_derivatives
from .solver import BandedMatrix, NewtonOptions, dense_block_matrix, lu_banded_solve, newton_solve
from .tableaus import PartitionedTableau
from .trajectory import StepRecord, StepSink, Trajectory


@dataclass
class CtStages:
    Ydot: np.ndarray
    Q: np.ndarray
    Qdot: np.ndarray


@dataclass
class CtState:
    t: float
    q: DofState
    p: np.ndarray
    u: Optional[np.ndarray] = None
    stages: Optional[CtStages] = None

    @property
    def X_stage_history(self):
        return None if self.stages is None else self.stages.Q


def _sub(A, rows, cols):
    return A[np.ix_(rows, cols)]


def velocity_from_momenta(q: DofState, p, c: ConstraintSet, density: DensitySpec = sine_gordon):
    """Recover (ydot, Xdot) from p = (M u)_y together with Dg u = 0."""
    N = q.N
    M = lagrangian_derivatives(q, np.zeros(2 * N), density).L_uu
    Dg = cons.jacobian_Dg(q, c)
    A = sp.lil_matrix((2 * N, 2 * N))
    A[0::2, :] = M[0::2, :]
    A[1::2, :] = Dg
    rhs = np.zeros(2 * N)
    rhs[0::2] = p
    return lu_banded_solve(BandedMatrix.from_sparse(A.tocsr(), 3, 3), rhs)


def momenta_from_velocity(q: DofState, u, density: DensitySpec = sine_gordon):
    """y-rows of M(q) u."""
    d = lagrangian_derivatives(q, u, density, hessian=False)
    return d.L_u[0::2].copy()


class _StageSystem:
    """Residual and Jacobian of the stage equations of one step.

    With ``frozen`` set to (Q, Qdot) the mesh stages are given data and the
    unknowns are the field stage velocities only.
    """

    def __init__(self, state: CtState, h, tab, c, density, frozen=None):
        self.q0 = state.q
        self.p0 = np.asarray(state.p, dtype=float)
        self.h = h
        self.tab = tab
        self.c = c
        self.density = density
        self.frozen = frozen
        self.N = state.q.N
        N = self.N
        self.iy = np.arange(0, 2 * N, 2)
        self.iX = self.iy + 1
        self._key = None

    def unpack(self, z):
        s, N = self.tab.s, self.N
        if self.frozen is not None:
            return z.reshape(s, N), self.frozen[0], self.frozen[1]
        Z = z.reshape(s, 3, N)
        return Z[:, 0], Z[:, 1], Z[:, 2]

    def pack(self, Ydot, Q, Qdot):
        if self.frozen is not None:
            return np.asarray(Ydot, dtype=float).ravel().copy()
        return np.stack([Ydot, Q, Qdot], axis=1).ravel()

    def _evaluate(self, z):
        # Newton asks for F and J at the same point; evaluate Hessians once.
        key = z.tobytes()
        if self._key == key:
            return self._cache
        Ydot, Q, Qdot = self.unpack(z)
        Y = self.q0.y[1:-1][None, :] + self.h * self.tab.a @ Ydot
        stages = []
        for i in range(self.tab.s):
            qs = _dofstate_from_mesh_like(self.q0, Y[i], Q[i])
            us = np.empty(2 * self.N)
            us[0::2] = Ydot[i]
            us[1::2] = Qdot[i]
            d = lagrangian_derivatives(qs, us, self.density)
            stages.append((qs, us, d))
        self._key = key
        self._cache = (Y, stages)
        return self._cache

    def residual(self, z):
        _, stages = self._evaluate(z)
        tab, h, iy = self.tab, self.h, self.iy
        Lq_y = np.array([d.L_q[iy] for _, _, d in stages])
        out = []
        for i, (qs, us, d) in enumerate(stages):
            E1 = d.L_u[iy] - self.p0 - h * tab.abar[i] @ Lq_y
            if self.frozen is not None:
                out.append(E1)
                continue
            E2 = cons.g(qs, self.c)
            E3 = cons.jacobian_Dg(qs, self.c) @ us
            out += [E1, E2, E3]
        return np.concatenate(out)

    def jacobian(self, z):
        _, stages = self._evaluate(z)
        tab, h, iy, iX, s = self.tab, self.h, self.iy, self.iX, self.tab.s
        parts = []
        for qs, us, d in stages:
            Lqq, Lqu, Luu = d.L_qq.toarray(), d.L_qu.toarray(), d.L_uu.toarray()
            Lqu_T = Lqu.T
            blk = {
                "qq_yy": _sub(Lqq, iy, iy),
                "qu_yy": _sub(Lqu, iy, iy),
                "uq_yy": _sub(Lqu_T, iy, iy),
                "uu_yy": _sub(Luu, iy, iy),
            }
            if self.frozen is None:
                Dg = cons.jacobian_Dg(qs, self.c).toarray()
                HU = cons.hessian_times(self.c, us).toarray()
                blk.update(
                    qq_yX=_sub(Lqq, iy, iX),
                    qu_yX=_sub(Lqu, iy, iX),
                    uq_yX=_sub(Lqu_T, iy, iX),
                    uu_yX=_sub(Luu, iy, iX),
                    Dg_y=Dg[:, iy],
                    Dg_X=Dg[:, iX],
                    HU_y=HU[:, iy],
                    HU_X=HU[:, iX],
                )
            parts.append(blk)
        a, abar = tab.a, tab.abar
        nv = 1 if self.frozen is not None else 3
        grid = [[None] * (nv * s) for _ in range(nv * s)]
        for i in range(s):
            Pi = parts[i]
            for j in range(s):
                Pj = parts[j]
                # d E1_i / d Ydot^j
                blk = h * a[i, j] * Pi["uq_yy"] - h * abar[i, j] * Pj["qu_yy"]
                if i == j:
                    blk = blk + Pi["uu_yy"]
                for l in range(s):
                    coef = h * h * abar[i, l] * a[l, j]
                    if coef != 0.0:
                        blk = blk - coef * parts[l]["qq_yy"]
                grid[nv * i][nv * j] = blk
                if self.frozen is not None:
                    continue
                dQ = -h * abar[i, j] * Pj["qq_yX"]
                dQdot = -h * abar[i, j] * Pj["qu_yX"]
                dY3 = h * a[i, j] * Pi["HU_y"]
                if i == j:
                    dQ = dQ + Pi["uq_yX"]
                    dQdot = dQdot + Pi["uu_yX"]
                    dY3 = dY3 + Pi["Dg_y"]
                grid[nv * i][nv * j + 1] = dQ
                grid[nv * i][nv * j + 2] = dQdot
                grid[nv * i + 1][nv * j] = h * a[i, j] * Pi["Dg_y"]
                grid[nv * i + 2][nv * j] = dY3
                if i == j:
                    grid[nv * i + 1][nv * j + 1] = Pi["Dg_X"]
                    grid[nv * i + 2][nv * j + 1] = Pi["HU_X"]
                    grid[nv * i + 2][nv * j + 2] = Pi["Dg_X"]
        return dense_block_matrix(grid)

    def finish(self, z):
        """Endpoint field values and momenta from converged stages."""
        Y, stages = self._evaluate(z)
        Ydot, Q, Qdot = self.unpack(z)
        tab, h = self.tab, self.h
        Lq_y = np.array([d.L_q[self.iy] for _, _, d in stages])
        y1 = self.q0.y[1:-1] + h * tab.b @ Ydot
        p1 = self.p0 + h * tab.bbar @ Lq_y
        return y1, p1


def _dofstate_from_mesh_like(template: DofState, y_int, X_int):
    y = template.y.copy()
    X = template.X.copy()
    y[1:-1] = y_int
    X[1:-1] = X_int
    return DofState(y, X)


def _initial_guess(state: CtState, h, tab, frozen):
    N = state.q.N
    s = tab.s
    if state.stages is not None:
        Ydot = state.stages.Ydot.copy()
        Qdot = state.stages.Qdot.copy()
    else:
        u = np.zeros(2 * N) if state.u is None else state.u
        Ydot = np.tile(u[0::2], (s, 1))
        Qdot = np.tile(u[1::2], (s, 1))
    if frozen is not None:
        return Ydot, frozen[0], frozen[1]
    Q = state.q.X[1:-1][None, :] + h * tab.a @ Qdot
    return Ydot, Q, Qdot


def prk_frozen_mesh_step(state: CtState, dt, tab: PartitionedTableau, Q, Qdot,
                         density: DensitySpec = sine_gordon, opts: NewtonOptions | None = None,
                         Ydot_guess=None):
    """Unconstrained PRK step for (y, p) with prescribed mesh stages.

    Returns (y_{n+1} interior, p_{n+1}, Ydot stages).
    """
    Q = np.asarray(Q, dtype=float)
    Qdot = np.asarray(Qdot, dtype=float)
    system = _StageSystem(state, dt, tab, None, density, frozen=(Q, Qdot))
    if Ydot_guess is None:
        Ydot_guess, _, _ = _initial_guess(state, dt, tab, (Q, Qdot))
    res = newton_solve(system.residual, system.jacobian, system.pack(Ydot_guess, Q, Qdot), opts)
    y1, p1 = system.finish(res.x)
    return y1, p1, res.x.reshape(tab.s, -1)


def ct_step(state: CtState, dt, tab: PartitionedTableau, c: ConstraintSet,
            density: DensitySpec = sine_gordon, opts: NewtonOptions | None = None) -> CtState:
    """One step of the partitioned RK scheme with state-space mesh constraints."""
    if not dt != 0:
        raise ValueError("dt must be nonzero")
    opts = opts or NewtonOptions()
    q0 = state.q
    N = q0.N
    if c.is_uniform:
        # Static mesh: mesh stages are the current positions at rest.
        Q = np.tile(q0.X[1:-1], (tab.s, 1))
        Qdot = np.zeros((tab.s, N))
        y1, p1, Ydot = prk_frozen_mesh_step(state, dt, tab, Q, Qdot, density, opts,
                                            _initial_guess(state, dt, tab, (Q, Qdot))[0])
        q1 = _dofstate_from_mesh_like(q0, y1, q0.X[1:-1])
        X1 = q0.X[1:-1]
    else:
        system = _StageSystem(state, dt, tab, c, density)
        guess = system.pack(*_initial_guess(state, dt, tab, None))
        res = newton_solve(system.residual, system.jacobian, guess, opts)
        Ydot, Q, Qdot = (np.array(v) for v in system.unpack(res.x))
        y1, p1 = system.finish(res.x)
        y_full = q0.y.copy()
        y_full[1:-1] = y1
        X_seed = q0.X[1:-1] + dt * tab.b @ Qdot
        X1 = cons.solve_constraint_for_X(y_full, c, X_seed, q0.X[-1], opts)
        q1 = _dofstate_from_mesh_like(q0, y1, X1)
    u1 = velocity_from_momenta(q1, p1, c, density)
    return CtState(state.t + dt, q1, p1, u1, CtStages(np.array(Ydot), np.array(Q), np.array(Qdot)))


def ct_record(step, state: CtState, c, density=sine_gordon) -> StepRecord:
    u = state.u if state.u is not None else velocity_from_momenta(state.q, state.p, c, density)
    return StepRecord(
        step=step,
        t=state.t,
        y=state.q.y.copy(),
        X=state.q.X.copy(),
        E_N=discrete_energy(state.q, u, density),
        g_norm=float(np.abs(cons.g(state.q, c)).max(initial=0.0)),
        p=np.array(state.p, dtype=float),
        u=np.array(u, dtype=float),
    )


def ct_integrate(state0: CtState, dt, nsteps, tab: PartitionedTableau, c: ConstraintSet,
                 density: DensitySpec = sine_gordon, sink: StepSink | None = None,
                 opts: NewtonOptions | None = None, t0=None) -> Trajectory:
    """Run ``nsteps`` steps, feeding one record per state to ``sink``.

    A failing step re-raises its error with ``.step`` set and the partial
    trajectory attached as ``.trajectory``.
    """
    traj = Trajectory()
    state = state0 if t0 is None else replace(state0, t=t0)
    traj.append(ct_record(0, state, c, density), sink)
    for n in range(1, nsteps + 1):
        try:
            state = ct_step(state, dt, tab, c, density, opts)
            # recompute time from the step index so records stay on the grid
            state.t = (state0.t if t0 is None else t0) + n * dt
            traj.append(ct_record(n, state, c, density), sink)
        except NumericalFailure as exc:
            exc.at_step(n)
            exc.trajectory = traj
            traj.failed_step = n
            traj.message = str(exc)
            raise
    traj.final_state = state
    return traj
