"""Lagrange-multiplier strategy: the mesh is dynamical and g(q) = 0 is holonomic.

Two steppers are provided.

``lm_step_trapezoidal`` solves the constrained discrete Euler-Lagrange
equations of the trapezoidal discrete Lagrangian in position-momentum form
(SHAKE type): unknowns q^{n+1} and one multiplier vector per step.

``lm_step_lobatto`` applies the constrained Lobatto IIIA-IIIB pair to the
slack-augmented Lagrangian ``L_A = L_N + w^T Dg(q) u``, where w is the slack
velocity, with constraints g(q) = 0 and r = 0.  The augmented mass matrix
stays nonsingular when M_N(q) is singular, which is what makes the
partitioned scheme well posed.  Per stage the unknowns are U_i (2N), W_i (N),
Lambda_i (N), mu_i (N), plus the endpoint velocity u^{n+1}; the endpoint
slack velocity is zero by the hidden constraint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constraints as cons
from .constraints import ConstraintSet
from .errors import NumericalFailure, SingularKkt
from .fieldtheory import DensitySpec, sine_gordon
from .semidiscrete import (
    DofState,
    assemble_mass_matrix,
    discrete_energy,
    force_f,
    lagrangian_derivatives,
)
from .solver import PIVOT_RTOL, BandedMatrix, NewtonOptions, dense_block_matrix, newton_solve
from .tableaus import get_tableau
from .trajectory import StepRecord, StepSink, Trajectory

log = logging.getLogger(__name__)

TRAPEZOIDAL = "Trapezoidal"
LOBATTO2 = "Lobatto2"
LOBATTO3 = "Lobatto3"
LM_SCHEMES = (TRAPEZOIDAL, LOBATTO2, LOBATTO3)


@dataclass
class LmState:
    """Phase-space state of the multiplier strategy.

    ``p`` are the full momenta (p_i, S_i) interleaved; ``u`` the matching
    velocities.  Slack position r, slack velocity w and slack momentum B are
    zero on exact solutions and kept to monitor that.  ``lam`` and ``mu`` are
    step-averaged multipliers.
    """

    t: float
    q: DofState
    u: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    r: np.ndarray = None
    w: np.ndarray = None
    B: np.ndarray = None
    mu: np.ndarray = None
    guess: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        N = self.q.N
        for name in ("r", "w", "B", "mu"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(N))


@dataclass
class KktSystem:
    """Bordered system [[M, Dg^T], [Dg, 0]] [udot; lam] = [f; h]."""

    M: BandedMatrix
    Dg: sp.csr_matrix
    rhs_f: np.ndarray
    rhs_h: np.ndarray

    def matrix(self):
        N = self.Dg.shape[0]
        return sp.bmat([[self.M.to_sparse(), self.Dg.T], [self.Dg, sp.csr_matrix((N, N))]], format="csc")

    def sigma_min(self):
        return float(np.linalg.svd(self.matrix().toarray(), compute_uv=False).min())

    def solve(self):
        A = self.matrix()
        scale = abs(A).max()
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularKkt(f"bordered matrix factorization failed: {exc}") from exc
        piv = np.abs(lu.U.diagonal()).min()
        if piv <= PIVOT_RTOL * scale:
            raise SingularKkt("bordered mass/constraint matrix is singular", min_pivot=float(piv))
        sol = lu.solve(np.concatenate([self.rhs_f, self.rhs_h]))
        n = self.rhs_f.size
        return sol[:n], sol[n:]


def kkt_system(q: DofState, u, c: ConstraintSet, density: DensitySpec = sine_gordon) -> KktSystem:
    return KktSystem(
        assemble_mass_matrix(q),
        cons.jacobian_Dg(q, c),
        force_f(q, u, density),
        cons.hessian_contraction_h(q, u, c),
    )


def consistent_accel_and_lambda(q: DofState, u, c: ConstraintSet, density: DensitySpec = sine_gordon):
    """Accelerations and multipliers compatible with g = 0 at second order."""
    return kkt_system(q, u, c, density).solve()


def kkt_sigma_min(q: DofState, c: ConstraintSet, density: DensitySpec = sine_gordon) -> float:
    return kkt_system(q, np.zeros(2 * q.N), c, density).sigma_min()


def velocity_from_momenta(q: DofState, p, c: ConstraintSet, density: DensitySpec = sine_gordon):
    """Velocity with M u + Dg^T nu = p and Dg u = 0 (nu discarded)."""
    N = q.N
    ksys = KktSystem(
        assemble_mass_matrix(q), cons.jacobian_Dg(q, c), np.asarray(p, dtype=float), np.zeros(N)
    )
    return ksys.solve()[0]


def lm_initial_state(q: DofState, u, c: ConstraintSet, density: DensitySpec = sine_gordon,
                     t: float = 0.0) -> LmState:
    """Momenta from the full Legendre transform, zero slack, seeded multipliers."""
    u = np.asarray(u, dtype=float)
    p = lagrangian_derivatives(q, u, density, hessian=False).L_u
    _, lam = consistent_accel_and_lambda(q, u, c, density)
    return LmState(t, q, u.copy(), p, lam)


# ----------------------------------------------------------------- trapezoidal


class _TrapezoidSystem:
    """p0 + D1 Ld(q0, q1) - Dg(q0)^T Lam = 0 and g(q1) = 0; Lam = h lambda."""

    def __init__(self, state: LmState, h, c, density):
        self.q0 = state.q
        self.z0 = state.q.interior()
        self.p0 = np.asarray(state.p, dtype=float)
        self.h = h
        self.c = c
        self.density = density
        self.N = state.q.N
        self.Dg0 = cons.jacobian_Dg(state.q, c)
        self._key = None

    def _eval(self, x):
        key = x.tobytes()
        if key != self._key:
            n = 2 * self.N
            z1 = x[:n]
            v = (z1 - self.z0) / self.h
            q1 = self.q0.with_interior(z1)
            d0 = lagrangian_derivatives(self.q0, v, self.density)
            d1 = lagrangian_derivatives(q1, v, self.density)
            self._key, self._cache = key, (q1, v, d0, d1)
        return self._cache

    def D1(self, d0, d1):
        return 0.5 * self.h * d0.L_q - 0.5 * (d0.L_u + d1.L_u)

    def D2(self, d0, d1):
        return 0.5 * self.h * d1.L_q + 0.5 * (d0.L_u + d1.L_u)

    def residual(self, x):
        q1, _, d0, d1 = self._eval(x)
        lam = x[2 * self.N:]
        return np.concatenate([self.p0 + self.D1(d0, d1) - self.Dg0.T @ lam, cons.g(q1, self.c)])

    def jacobian(self, x):
        q1, _, d0, d1 = self._eval(x)
        h = self.h
        dD1 = 0.5 * d0.L_qu - (d0.L_uu + d1.L_uu) / (2 * h) - 0.5 * d1.L_qu.T
        return sp.bmat([[dD1, -self.Dg0.T], [cons.jacobian_Dg(q1, self.c), None]], format="csc")


def lm_step_trapezoidal(state: LmState, dt, c: ConstraintSet, density: DensitySpec = sine_gordon,
                        opts: NewtonOptions | None = None) -> LmState:
    """One SHAKE-type step; returns multipliers scaled back to force units."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    opts = opts or NewtonOptions()
    system = _TrapezoidSystem(state, dt, c, density)
    guess = state.guess or {}
    z_guess = guess.get("z1", state.q.interior() + dt * state.u)
    x0 = np.concatenate([z_guess, dt * np.asarray(state.lam, dtype=float)])
    res = newton_solve(system.residual, system.jacobian, x0, opts)
    n = 2 * state.q.N
    q1, _, d0, d1 = system._eval(res.x)
    p1 = system.D2(d0, d1)
    u1 = velocity_from_momenta(q1, p1, c, density)
    lam = res.x[n:] / dt
    z1 = q1.interior()
    nxt = LmState(state.t + dt, q1, u1, p1, lam, B=cons.jacobian_Dg(q1, c) @ u1)
    nxt.guess = {"z1": 2 * z1 - state.q.interior()}
    return nxt


# --------------------------------------------------------------------- Lobatto


class _LobattoSystem:
    def __init__(self, state: LmState, h, tab, c, density):
        self.q0 = state.q
        self.z0 = state.q.interior()
        self.p0 = np.asarray(state.p, dtype=float)
        self.B0 = np.asarray(state.B, dtype=float)
        self.h = h
        self.tab = tab
        self.c = c
        self.density = density
        self.N = state.q.N
        self._key = None
        s, N = tab.s, self.N
        # layout: U (s x 2N), W (s x N), Lam (s x N), mu (s x N), u1 (2N)
        self.sizes = [2 * N * s, N * s, N * s, N * s, 2 * N]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    def unpack(self, x):
        s, N = self.tab.s, self.N
        o = self.offsets
        U = x[o[0]:o[1]].reshape(s, 2 * N)
        W = x[o[1]:o[2]].reshape(s, N)
        Lam = x[o[2]:o[3]].reshape(s, N)
        mu = x[o[3]:o[4]].reshape(s, N)
        u1 = x[o[4]:o[5]]
        return U, W, Lam, mu, u1

    @staticmethod
    def pack(U, W, Lam, mu, u1):
        return np.concatenate([np.ravel(U), np.ravel(W), np.ravel(Lam), np.ravel(mu), np.ravel(u1)])

    def _eval(self, x):
        key = x.tobytes()
        if key == self._key:
            return self._cache
        U, W, Lam, mu, u1 = self.unpack(x)
        tab, h, c = self.tab, self.h, self.c
        Z = self.z0[None, :] + h * tab.a @ U
        z1 = self.z0 + h * tab.b @ U
        stages = []
        for i in range(tab.s):
            qi = self.q0.with_interior(Z[i])
            d = lagrangian_derivatives(qi, U[i], self.density)
            Dg = cons.jacobian_Dg(qi, c)
            G = d.L_q + cons.hessian_weighted(c, W[i]) @ U[i] - Dg.T @ Lam[i]
            stages.append((qi, d, Dg, G))
        q1 = self.q0.with_interior(z1)
        d1 = lagrangian_derivatives(q1, u1, self.density)
        Dg1 = cons.jacobian_Dg(q1, c)
        self._key, self._cache = key, (U, W, Lam, mu, u1, stages, q1, d1, Dg1)
        return self._cache

    def residual(self, x):
        U, W, Lam, mu, u1, stages, q1, d1, Dg1 = self._eval(x)
        tab, h = self.tab, self.h
        G = np.array([st[3] for st in stages])
        out = []
        for i, (qi, d, Dg, _) in enumerate(stages):
            out.append(d.L_u + Dg.T @ W[i] - self.p0 - h * tab.abar[i] @ G)
        for i, (qi, d, Dg, _) in enumerate(stages):
            out.append(Dg @ U[i] - self.B0 + h * tab.abar[i] @ mu)
        for i in range(1, tab.s):
            out.append(cons.g(stages[i][0], self.c))
        for i in range(1, tab.s):
            out.append(tab.a[i] @ W)
        out.append(d1.L_u - self.p0 - h * tab.b @ G)
        out.append(Dg1 @ u1)
        out.append(h * tab.b @ mu - self.B0)
        return np.concatenate(out)

    def jacobian(self, x):
        U, W, Lam, mu, u1, stages, q1, d1, Dg1 = self._eval(x)
        tab, h, c, s, N = self.tab, self.h, self.c, self.tab.s, self.N
        a, abar, b = tab.a, tab.abar, tab.b
        I_N = np.eye(N)
        per = []
        for i, (qi, d, Dg, _) in enumerate(stages):
            HW = cons.hessian_weighted(c, W[i]).toarray()
            Lqu = d.L_qu.toarray()
            HU = cons.hessian_times(c, U[i]).toarray()
            Dg = Dg.toarray()
            per.append(
                dict(
                    Gq=d.L_qq.toarray() - cons.hessian_weighted(c, Lam[i]).toarray(),
                    Gu=Lqu + HW,
                    GW=HU.T,
                    GL=-Dg.T,
                    Sq=Lqu.T + HW,
                    M=d.L_uu.toarray(),
                    Dg=Dg,
                    HU=HU,
                )
            )

        def dG_dU(j, k):
            blk = h * a[j, k] * per[j]["Gq"]
            return blk + per[j]["Gu"] if j == k else blk

        # block rows: EP_i (s), EB_i (s), EG_i (s-1), ER_i (s-1), EE, EH, EM
        # block cols: U_k (s), W_k (s), Lam_k (s), mu_k (s), u1
        nrow = 2 * s + 2 * (s - 1) + 3
        ncol = 4 * s + 1
        grid = [[None] * ncol for _ in range(nrow)]
        cU, cW, cL, cM, cu1 = 0, s, 2 * s, 3 * s, 4 * s

        def acc(r, cidx, blk):
            grid[r][cidx] = blk if grid[r][cidx] is None else grid[r][cidx] + blk

        for i in range(s):
            Pi = per[i]
            for k in range(s):
                blk = h * a[i, k] * Pi["Sq"]
                if i == k:
                    blk = blk + Pi["M"]
                for j in range(s):
                    if abar[i, j] != 0.0:
                        blk = blk - h * abar[i, j] * dG_dU(j, k)
                acc(i, cU + k, blk)
                wblk = -h * abar[i, k] * per[k]["GW"]
                if i == k:
                    wblk = wblk + Pi["Dg"].T
                acc(i, cW + k, wblk)
                acc(i, cL + k, -h * abar[i, k] * per[k]["GL"])
                # EB_i
                bu = h * a[i, k] * Pi["HU"]
                if i == k:
                    bu = bu + Pi["Dg"]
                acc(s + i, cU + k, bu)
                acc(s + i, cM + k, h * abar[i, k] * I_N)
        r0 = 2 * s
        for i in range(1, s):
            for k in range(s):
                acc(r0 + i - 1, cU + k, h * a[i, k] * per[i]["Dg"])
                acc(r0 + (s - 1) + i - 1, cW + k, a[i, k] * I_N)
        rE = 2 * s + 2 * (s - 1)
        Sq1 = d1.L_qu.T.toarray()
        HU1 = cons.hessian_times(c, u1).toarray()
        for k in range(s):
            blk = h * b[k] * Sq1
            for j in range(s):
                blk = blk - h * b[j] * dG_dU(j, k)
            acc(rE, cU + k, blk)
            acc(rE, cW + k, -h * b[k] * per[k]["GW"])
            acc(rE, cL + k, -h * b[k] * per[k]["GL"])
            acc(rE + 1, cU + k, h * b[k] * HU1)
            acc(rE + 2, cM + k, h * b[k] * I_N)
        acc(rE, cu1, d1.L_uu.toarray())
        acc(rE + 1, cu1, Dg1.toarray())
        return dense_block_matrix(grid)

    def initial_guess(self, state: LmState):
        s, N = self.tab.s, self.N
        g = state.guess
        if g is not None and g.get("s") == s:
            return g["x"].copy()
        U = np.tile(state.u, (s, 1))
        Lam = np.tile(state.lam, (s, 1))
        return self.pack(U, np.zeros((s, N)), Lam, np.zeros((s, N)), state.u)


def lm_step_lobatto(state: LmState, dt, s: int, c: ConstraintSet, density: DensitySpec = sine_gordon,
                    opts: NewtonOptions | None = None) -> LmState:
    """One constrained Lobatto IIIA-IIIB step (s = 2 or 3) on the augmented system."""
    if s not in (2, 3):
        raise ValueError("Lobatto stepper supports s = 2 or 3")
    if not dt > 0:
        raise ValueError("dt must be positive")
    opts = opts or NewtonOptions()
    tab = get_tableau(f"Lobatto{s}")
    system = _LobattoSystem(state, dt, tab, c, density)
    res = newton_solve(system.residual, system.jacobian, system.initial_guess(state), opts)
    U, W, Lam, mu, u1, stages, q1, d1, Dg1 = system._eval(res.x)
    N = state.q.N
    # slack position after the step: r0 + h sum b W (zero by the stage conditions)
    r1 = state.r + dt * tab.b @ W
    nxt = LmState(
        t=state.t + dt,
        q=q1,
        u=u1.copy(),
        p=d1.L_u.copy(),
        lam=tab.b @ Lam,
        r=r1,
        w=np.zeros(N),
        B=Dg1 @ u1,
        mu=tab.b @ mu,
    )
    nxt.guess = {"s": s, "x": res.x.copy(), "stage_mu": mu.copy(), "stage_W": W.copy()}
    return nxt


def lm_step(state: LmState, dt, scheme: str, c: ConstraintSet, density: DensitySpec = sine_gordon,
            opts: NewtonOptions | None = None) -> LmState:
    if scheme == TRAPEZOIDAL:
        return lm_step_trapezoidal(state, dt, c, density, opts)
    if scheme in (LOBATTO2, LOBATTO3):
        return lm_step_lobatto(state, dt, int(scheme[-1]), c, density, opts)
    raise ValueError(f"unknown LM scheme {scheme!r}; choose from {LM_SCHEMES}")


def lm_record(step, state: LmState, c, density=sine_gordon, monitor_kkt=False) -> StepRecord:
    return StepRecord(
        step=step,
        t=state.t,
        y=state.q.y.copy(),
        X=state.q.X.copy(),
        E_N=discrete_energy(state.q, state.u, density),
        g_norm=float(np.abs(cons.g(state.q, c)).max(initial=0.0)),
        p=np.array(state.p, dtype=float),
        u=np.array(state.u, dtype=float),
        lambda_norm=float(np.abs(state.lam).max(initial=0.0)),
        r_norm=float(np.abs(state.r).max(initial=0.0)),
        mu_norm=float(np.abs(state.mu).max(initial=0.0)),
        kkt_sigma_min=kkt_sigma_min(state.q, c, density) if monitor_kkt else float("nan"),
    )


def lm_integrate(state0: LmState, dt, nsteps, scheme: str, c: ConstraintSet,
                 density: DensitySpec = sine_gordon, sink: StepSink | None = None,
                 opts: NewtonOptions | None = None, monitor_kkt=False) -> Trajectory:
    """Driver with the same contract as ``ct_integrate``.

    On failure the smallest singular value of the bordered matrix at the last
    accepted state is attached to the error as ``details['kkt_sigma_min']``.
    """
    traj = Trajectory()
    state = state0
    traj.append(lm_record(0, state, c, density, monitor_kkt), sink)
    for n in range(1, nsteps + 1):
        try:
            state = lm_step(state, dt, scheme, c, density, opts)
            state.t = state0.t + n * dt
            traj.append(lm_record(n, state, c, density, monitor_kkt), sink)
        except NumericalFailure as exc:
            exc.at_step(n)
            try:
                exc.details["kkt_sigma_min"] = kkt_sigma_min(state.q, c, density)
            except NumericalFailure:
                exc.details["kkt_sigma_min"] = 0.0
            exc.trajectory = traj
            traj.failed_step = n
            traj.message = str(exc)
            raise
    traj.final_state = state
    return traj
