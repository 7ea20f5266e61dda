"""Piecewise-linear finite-element semi-discretization on a moving mesh.

Unknowns are the interior nodal field values ``y_i`` and node positions
``X_i`` (i = 1..N), stored interleaved as ``q = (y_1, X_1, ..., y_N, X_N)``.
Boundary values ``y_0 = yL``, ``y_{N+1} = yR``, ``X_0 = 0`` and
``X_{N+1} = Xmax`` are fixed.

On cell k (between nodes k and k+1) the semi-discrete Lagrangian is

    delta/6 * (a^2 + a b + b^2) - delta * mean_cell R(gamma, phi)

with ``a = ydot_k - gamma Xdot_k`` and ``b = ydot_{k+1} - gamma Xdot_{k+1}``.
Everything below is assembled from per-cell gradients and Hessians in the
local variables (y_k, X_k, y_{k+1}, X_{k+1}).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._sinc import sinc_derivs
from .errors import MeshCrossing
from .fieldtheory import DensitySpec, sine_gordon
from .solver import BandedMatrix

CROSSING_FLOOR = 1e-10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_GL_S = 0.5 * (_GL_NODES + 1.0)
_GL_W = 0.5 * _GL_WEIGHTS


@dataclass(frozen=True)
class MeshConfig:
    N: int
    Xmax: float
    yL: float = 0.0
    yR: float = 0.0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one interior node")
        if not self.Xmax > 0:
            raise ValueError("Xmax must be positive")

    @property
    def dx(self):
        return self.Xmax / (self.N + 1)

    def uniform_X(self):
        return np.linspace(0.0, self.Xmax, self.N + 2)


@dataclass
class DofState:
    """Nodal values including the fixed boundary entries."""

    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.y.shape != self.X.shape or self.y.ndim != 1 or self.y.size < 3:
            raise ValueError("y and X must be 1-d arrays of equal length N+2 >= 3")

    @property
    def N(self):
        return self.y.size - 2

    def interior(self):
        """Interleaved interior vector (y_1, X_1, ..., y_N, X_N)."""
        q = np.empty(2 * self.N)
        q[0::2] = self.y[1:-1]
        q[1::2] = self.X[1:-1]
        return q

    def with_interior(self, q):
        y = self.y.copy()
        X = self.X.copy()
        y[1:-1] = q[0::2]
        X[1:-1] = q[1::2]
        return DofState(y, X)

    @classmethod
    def from_mesh(cls, mesh: MeshConfig, y_interior, X_interior):
        y = np.concatenate([[mesh.yL], np.asarray(y_interior, float), [mesh.yR]])
        X = np.concatenate([[0.0], np.asarray(X_interior, float), [mesh.Xmax]])
        return cls(y, X)

    def copy(self):
        return DofState(self.y.copy(), self.X.copy())


@dataclass
class VelocityState:
    ydot: np.ndarray
    Xdot: np.ndarray

    def __post_init__(self):
        self.ydot = np.asarray(self.ydot, dtype=float)
        self.Xdot = np.asarray(self.Xdot, dtype=float)

    def interior(self):
        u = np.empty(2 * (self.ydot.size - 2))
        u[0::2] = self.ydot[1:-1]
        u[1::2] = self.Xdot[1:-1]
        return u

    @classmethod
    def from_interior(cls, u):
        u = np.asarray(u, dtype=float)
        z = np.zeros(1)
        return cls(np.concatenate([z, u[0::2], z]), np.concatenate([z, u[1::2], z]))


def _full_velocity(u, N):
    u = np.asarray(u, dtype=float)
    if u.shape != (2 * N,):
        raise ValueError(f"velocity vector must have length {2 * N}")
    ydot = np.zeros(N + 2)
    Xdot = np.zeros(N + 2)
    ydot[1:-1] = u[0::2]
    Xdot[1:-1] = u[1::2]
    return ydot, Xdot


def gamma_delta(q: DofState, delta_min=None):
    """Cell widths and slopes for cells 0..N.

    Raises MeshCrossing if a width is at or below ``delta_min``
    (default ``1e-10 * Xmax / (N + 1)``).
    """
    delta = np.diff(q.X)
    if delta_min is None:
        delta_min = CROSSING_FLOOR * (q.X[-1] - q.X[0]) / (q.N + 1)
    bad = np.flatnonzero(~(delta > delta_min))
    if bad.size:
        raise MeshCrossing(
            f"cell {bad[0]} collapsed (width {delta[bad[0]]:.3e})", cell=int(bad[0])
        )
    return delta, np.diff(q.y) / delta


# ---------------------------------------------------------------- cell kernels

_D_DELTA = np.array([0.0, -1.0, 0.0, 1.0])
_D_DIFF = np.array([-1.0, 0.0, 1.0, 0.0])
# (y0, y1, delta) as linear functions of the local (y0, X0, y1, X1)
_TO_YYD = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, -1.0, 0.0, 1.0]])


def cell_kinetic(delta, gamma, v0, W0, v1, W1, hessian=True):
    """Kinetic cell terms: value, gradient (8) and Hessian (8x8).

    Local ordering is (y0, X0, y1, X1, ydot0, Xdot0, ydot1, Xdot1).
    """
    a = v0 - gamma * W0
    b = v1 - gamma * W1
    A = 2 * a + b
    B = a + 2 * b
    T = delta / 6 * (a * a + a * b + b * b)
    n = delta.size
    dgam = (_D_DIFF[None, :] - gamma[:, None] * _D_DELTA[None, :]) / delta[:, None]
    T_d = (a * a + a * b + b * b) / 6
    T_g = -delta / 6 * (A * W0 + B * W1)
    grad = np.empty((n, 8))
    grad[:, :4] = T_d[:, None] * _D_DELTA + T_g[:, None] * dgam
    gv = np.stack([A, -gamma * A, B, -gamma * B], axis=1)
    grad[:, 4:] = delta[:, None] / 6 * gv
    if not hessian:
        return T, grad, None
    T_dg = T_g / delta
    T_gg = delta / 3 * (W0 * W0 + W0 * W1 + W1 * W1)
    outer = np.einsum
    dd = np.outer(_D_DELTA, _D_DELTA)
    cross = np.outer(_D_DIFF, _D_DELTA)
    cross = cross + cross.T
    hess_gam = (-cross[None] + 2 * gamma[:, None, None] * dd[None]) / (delta**2)[:, None, None]
    dg_dd = outer("ki,j->kij", dgam, _D_DELTA)
    H = np.empty((n, 8, 8))
    H[:, :4, :4] = (
        T_dg[:, None, None] * (dg_dd + dg_dd.transpose(0, 2, 1))
        + T_gg[:, None, None] * outer("ki,kj->kij", dgam, dgam)
        + T_g[:, None, None] * hess_gam
    )
    dA = -(2 * W0 + W1)
    dB = -(W0 + 2 * W1)
    gv_d = gv / 6
    gv_g = delta[:, None] / 6 * np.stack(
        [dA, -A - gamma * dA, dB, -B - gamma * dB], axis=1
    )
    H_vp = outer("ki,j->kij", gv_d, _D_DELTA) + outer("ki,kj->kij", gv_g, dgam)
    H[:, 4:, :4] = H_vp
    H[:, :4, 4:] = H_vp.transpose(0, 2, 1)
    g = gamma
    K = np.empty((n, 4, 4))
    K[:, 0] = np.stack([2 + 0 * g, -2 * g, 1 + 0 * g, -g], axis=1)
    K[:, 1] = np.stack([-2 * g, 2 * g * g, -g, g * g], axis=1)
    K[:, 2] = np.stack([1 + 0 * g, -g, 2 + 0 * g, -2 * g], axis=1)
    K[:, 3] = np.stack([-g, g * g, -2 * g, 2 * g * g], axis=1)
    H[:, 4:, 4:] = delta[:, None, None] / 6 * K
    return T, grad, H


def _lift_potential(P, P3, H3):
    """Map (y0, y1, delta) derivatives to the local (y0, X0, y1, X1) frame."""
    grad = P3 @ _TO_YYD
    if H3 is None:
        return P, grad, None
    H = np.einsum("ai,kab,bj->kij", _TO_YYD, H3, _TO_YYD)
    return P, grad, H


def _potential_sine_gordon(y0, y1, delta, hessian):
    diff = y1 - y0
    gam = diff / delta
    m = 0.5 * (y0 + y1)
    j, j1, j2 = sinc_derivs(0.5 * diff)
    cm, sm = np.cos(m), np.sin(m)
    S = cm * j
    S_m, S_h = -sm * j, cm * j1
    S0 = 0.5 * (S_m - S_h)
    S1 = 0.5 * (S_m + S_h)
    P = 0.5 * diff * gam + delta * (1.0 - S)
    P3 = np.stack([-gam - delta * S0, gam - delta * S1, -0.5 * gam * gam + 1.0 - S], axis=1)
    if not hessian:
        return _lift_potential(P, P3, None)
    S_mm, S_mh, S_hh = -cm * j, -sm * j1, cm * j2
    S00 = 0.25 * (S_mm - 2 * S_mh + S_hh)
    S11 = 0.25 * (S_mm + 2 * S_mh + S_hh)
    S01 = 0.25 * (S_mm - S_hh)
    inv = 1.0 / delta
    H3 = np.empty((delta.size, 3, 3))
    H3[:, 0, 0] = inv - delta * S00
    H3[:, 1, 1] = inv - delta * S11
    H3[:, 0, 1] = H3[:, 1, 0] = -inv - delta * S01
    H3[:, 0, 2] = H3[:, 2, 0] = gam * inv - S0
    H3[:, 1, 2] = H3[:, 2, 1] = -gam * inv - S1
    H3[:, 2, 2] = gam * gam * inv
    return _lift_potential(P, P3, H3)


def _quad_grad3(density, y0, y1, delta):
    gam = (y1 - y0) / delta
    phi = y0[:, None] * (1 - _GL_S) + y1[:, None] * _GL_S
    gx = np.broadcast_to(gam[:, None], phi.shape)
    R = density.R(gx, phi)
    Rx = density.dR_dphiX(gx, phi)
    Rp = density.dR_dphi(gx, phi)
    P = delta * (R @ _GL_W)
    P3 = np.stack(
        [
            (-Rx + delta[:, None] * Rp * (1 - _GL_S)) @ _GL_W,
            (Rx + delta[:, None] * Rp * _GL_S) @ _GL_W,
            (R - gam[:, None] * Rx) @ _GL_W,
        ],
        axis=1,
    )
    return P, P3


def _potential_quadrature(density, y0, y1, delta, hessian):
    P, P3 = _quad_grad3(density, y0, y1, delta)
    if not hessian:
        return _lift_potential(P, P3, None)
    base = np.stack([y0, y1, delta], axis=1)
    H3 = np.empty((delta.size, 3, 3))
    for k in range(3):
        h = 1e-6 * np.maximum(1.0, np.abs(base[:, k]))
        if k == 2:
            h = np.minimum(h, 0.25 * delta)
        up = base.copy()
        dn = base.copy()
        up[:, k] += h
        dn[:, k] -= h
        _, gu = _quad_grad3(density, up[:, 0], up[:, 1], up[:, 2])
        _, gd = _quad_grad3(density, dn[:, 0], dn[:, 1], dn[:, 2])
        H3[:, :, k] = (gu - gd) / (2 * h[:, None])
    H3 = 0.5 * (H3 + H3.transpose(0, 2, 1))
    return _lift_potential(P, P3, H3)


def cell_potential(density: DensitySpec, y0, y1, delta, hessian=True):
    """Cell potential ``delta * mean R`` with gradient (4) and Hessian (4x4)."""
    if density.name == "sine_gordon":
        return _potential_sine_gordon(y0, y1, delta, hessian)
    return _potential_quadrature(density, y0, y1, delta, hessian)


# ------------------------------------------------------------------ assembly


class _Assembler:
    """Scatter per-cell 4-vectors and 4x4 blocks into interleaved globals."""

    def __init__(self, N):
        self.N = N
        n = 2 * N
        k = np.arange(N + 1)
        g = np.stack([2 * (k - 1), 2 * (k - 1) + 1, 2 * k, 2 * k + 1], axis=1)
        g[0, :2] = -1
        g[N, 2:] = -1
        self.gidx = g
        self.vmask = g >= 0
        rows = np.broadcast_to(g[:, :, None], (N + 1, 4, 4))
        cols = np.broadcast_to(g[:, None, :], (N + 1, 4, 4))
        self.mmask = (rows >= 0) & (cols >= 0)
        keys = rows[self.mmask] * n + cols[self.mmask]
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.nnz = uniq.size
        r = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(r, np.arange(n + 1)).astype(np.int32)
        self.n = n

    def vector(self, cell_vals):
        return np.bincount(
            self.gidx[self.vmask], weights=cell_vals[self.vmask], minlength=self.n
        )

    def matrix(self, cell_blocks):
        data = np.bincount(self.inverse, weights=cell_blocks[self.mmask], minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


_ASSEMBLERS: dict[int, _Assembler] = {}


def assembler(N) -> _Assembler:
    a = _ASSEMBLERS.get(N)
    if a is None:
        a = _ASSEMBLERS[N] = _Assembler(N)
    return a


@dataclass
class LagrangianDerivatives:
    """Value and derivatives of L_N at (q, u); matrices are CSR, 2N x 2N.

    ``L_qu[i, j]`` is the mixed second derivative in q_i and u_j.
    """

    L: float
    L_q: np.ndarray
    L_u: np.ndarray
    L_qq: sp.csr_matrix | None = None
    L_qu: sp.csr_matrix | None = None
    L_uu: sp.csr_matrix | None = None


def lagrangian_derivatives(q: DofState, u, density: DensitySpec = sine_gordon, hessian=True,
                           delta_min=None) -> LagrangianDerivatives:
    N = q.N
    delta, gamma = gamma_delta(q, delta_min)
    ydot, Xdot = _full_velocity(u, N)
    T, gT, HT = cell_kinetic(delta, gamma, ydot[:-1], Xdot[:-1], ydot[1:], Xdot[1:], hessian)
    P, gP, HP = cell_potential(density, q.y[:-1], q.y[1:], delta, hessian)
    asm = assembler(N)
    out = LagrangianDerivatives(
        L=float(T.sum() - P.sum()),
        L_q=asm.vector(gT[:, :4] - gP),
        L_u=asm.vector(gT[:, 4:]),
    )
    if hessian:
        out.L_qq = asm.matrix(HT[:, :4, :4] - HP)
        out.L_qu = asm.matrix(HT[:, :4, 4:])
        out.L_uu = asm.matrix(HT[:, 4:, 4:])
    return out


# --------------------------------------------------------------- public API


def assemble_mass_matrix(q: DofState, delta_min=None) -> BandedMatrix:
    """Block-tridiagonal mass matrix built directly from the 2x2 blocks."""
    N = q.N
    delta, gamma = gamma_delta(q, delta_min)
    dl, dr = delta[:-1], delta[1:]
    gl, gr = gamma[:-1], gamma[1:]
    M = BandedMatrix.zeros(2 * N, 3, 3)
    iy = 2 * np.arange(N)
    iX = iy + 1
    M.add_entries(iy, iy, (dl + dr) / 3)
    off = -(dl * gl + dr * gr) / 3
    M.add_entries(iy, iX, off)
    M.add_entries(iX, iy, off)
    M.add_entries(iX, iX, (dl * gl**2 + dr * gr**2) / 3)
    if N > 1:
        d, g = delta[1:-1], gamma[1:-1]
        r, c = iy[:-1], iy[1:]
        for (dr_, dc_), val in (
            ((0, 0), d / 6),
            ((0, 1), -g * d / 6),
            ((1, 0), -g * d / 6),
            ((1, 1), g * g * d / 6),
        ):
            M.add_entries(r + dr_, c + dc_, val)
            M.add_entries(c + dc_, r + dr_, val)
    return M


def mass_determinant_formula(q: DofState) -> float:
    """Closed-form determinant of the mass matrix."""
    N = q.N
    delta, gamma = gamma_delta(q)
    pref = delta[0] * delta[-1] * np.prod(delta[1:-1] ** 2) / (9.0 * 12.0 ** (N - 1))
    return float(pref * np.prod(np.diff(gamma) ** 2))


def _cell_potentials(q, density, hessian=False):
    delta, _ = gamma_delta(q)
    return cell_potential(density, q.y[:-1], q.y[1:], delta, hessian)


def potential_RN(q: DofState, density: DensitySpec = sine_gordon) -> float:
    P, _, _ = _cell_potentials(q, density)
    return float(P.sum())


def grad_RN(q: DofState, density: DensitySpec = sine_gordon):
    _, g, _ = _cell_potentials(q, density)
    return assembler(q.N).vector(g)


def force_f(q: DofState, u, density: DensitySpec = sine_gordon):
    """Right-hand side f of ``M(q) udot = f(q, u)`` (unconstrained)."""
    d = lagrangian_derivatives(q, u, density, hessian=True)
    return d.L_q - d.L_qu.T @ np.asarray(u, dtype=float)


def semidiscrete_lagrangian(q: DofState, u, density: DensitySpec = sine_gordon) -> float:
    """Per-cell sum of delta/6 (a^2 + ab + b^2) minus R_N."""
    delta, gamma = gamma_delta(q)
    ydot, Xdot = _full_velocity(u, q.N)
    a = ydot[:-1] - gamma * Xdot[:-1]
    b = ydot[1:] - gamma * Xdot[1:]
    return float(np.sum(delta / 6 * (a * a + a * b + b * b)) - potential_RN(q, density))


def discrete_energy(q: DofState, u, density: DensitySpec = sine_gordon) -> float:
    """E_N = 0.5 u^T M u + R_N."""
    u = np.asarray(u, dtype=float)
    M = assemble_mass_matrix(q)
    return float(0.5 * u @ (M @ u) + potential_RN(q, density))
