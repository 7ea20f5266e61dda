"""Mesh-adaptation constraints g(q) = 0, one equation per interior node.

Arclength equidistribution on the local six-point stencil:

    g_i = c_i - c_{i-1},   c_k = alpha^2 (y_{k+1} - y_k)^2 + (X_{k+1} - X_k)^2

and the uniform-mesh constraint ``g_i = (X_{i+1} - X_i) / dx - 1``.  Both are
at most quadratic in q, so their Hessians are constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MeshCrossing, NoConvergence
from .semidiscrete import DofState, assembler
from .solver import BandedMatrix, NewtonOptions, lu_banded_solve

ARCLENGTH = "arclength"
UNIFORM = "uniform"


@dataclass(frozen=True)
class ConstraintSet:
    kind: str
    N: int
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in (ARCLENGTH, UNIFORM):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.N < 1:
            raise ValueError("need at least one interior node")

    @classmethod
    def arclength(cls, N, alpha):
        return cls(ARCLENGTH, N, float(alpha))

    @classmethod
    def uniform(cls, N):
        return cls(UNIFORM, N)

    @property
    def is_uniform(self):
        return self.kind == UNIFORM


def _dx(q: DofState):
    return (q.X[-1] - q.X[0]) / (q.N + 1)


def g(q: DofState, c: ConstraintSet):
    """Constraint residual, length N."""
    if c.is_uniform:
        return np.diff(q.X)[1:] / _dx(q) - 1.0
    cell = c.alpha**2 * np.diff(q.y) ** 2 + np.diff(q.X) ** 2
    return np.diff(cell)


def _stencil_rows(N, dy, dX, a2):
    """Sparse N x 2N matrix with rows grad(c_i - c_{i-1}) for cell differences dy, dX."""
    i = np.arange(N)
    # node offsets -1, 0, +1 relative to interior node i+1
    vals_y = [2 * a2 * dy[:-1], -2 * a2 * (dy[1:] + dy[:-1]), 2 * a2 * dy[1:]]
    vals_X = [2 * dX[:-1], -2 * (dX[1:] + dX[:-1]), 2 * dX[1:]]
    rows, cols, data = [], [], []
    for off, vy, vX in zip((-1, 0, 1), vals_y, vals_X):
        node = i + off
        keep = (node >= 0) & (node < N)
        rows += [i[keep], i[keep]]
        cols += [2 * node[keep], 2 * node[keep] + 1]
        data += [vy[keep], vX[keep]]
    return sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, 2 * N)
    )


def _uniform_rows(N, dx):
    i = np.arange(N)
    rows = np.concatenate([i, i[:-1]])
    cols = np.concatenate([2 * i + 1, 2 * (i[:-1] + 1) + 1])
    data = np.concatenate([-np.ones(N), np.ones(N - 1)]) / dx
    return sp.csr_matrix((data, (rows, cols)), shape=(N, 2 * N))


def jacobian_Dg(q: DofState, c: ConstraintSet):
    """Constraint Jacobian as a sparse N x 2N matrix (interleaved columns)."""
    if c.is_uniform:
        return _uniform_rows(q.N, _dx(q))
    return _stencil_rows(q.N, np.diff(q.y), np.diff(q.X), c.alpha**2)


def _full(u, N):
    u = np.asarray(u, dtype=float)
    ydot = np.zeros(N + 2)
    Xdot = np.zeros(N + 2)
    ydot[1:-1] = u[0::2]
    Xdot[1:-1] = u[1::2]
    return ydot, Xdot


def hessian_times(c: ConstraintSet, u):
    """N x 2N matrix whose k-th row is (H_k u)^T, H_k the Hessian of g_k."""
    N = c.N
    if c.is_uniform:
        return sp.csr_matrix((N, 2 * N))
    ydot, Xdot = _full(u, N)
    return _stencil_rows(N, np.diff(ydot), np.diff(Xdot), c.alpha**2)


def hessian_weighted(c: ConstraintSet, w):
    """sum_k w_k H_k as a sparse 2N x 2N matrix."""
    N = c.N
    if c.is_uniform:
        return sp.csr_matrix((2 * N, 2 * N))
    wf = np.zeros(N + 2)
    wf[1:-1] = w
    omega = -np.diff(wf)  # cell k enters g_k with + and g_{k+1} with -
    E = np.zeros((4, 4))
    E[np.ix_([0, 2], [0, 2])] = 2 * c.alpha**2 * np.array([[1, -1], [-1, 1]])
    E[np.ix_([1, 3], [1, 3])] = 2 * np.array([[1, -1], [-1, 1]])
    return assembler(N).matrix(omega[:, None, None] * E[None])


def hessian_contraction_h(q: DofState, u, c: ConstraintSet):
    """h_k = -u^T H_k u (acceleration-level constraint right-hand side)."""
    u = np.asarray(u, dtype=float)
    return -(hessian_times(c, u) @ u)


def _X_jacobian(y, X, c: ConstraintSet):
    N = y.size - 2
    if c.is_uniform:
        dx = (X[-1] - X[0]) / (N + 1)
        J = BandedMatrix.zeros(N, 1, 1)
        J.ab[1, :] = -1.0 / dx
        J.ab[0, 1:] = 1.0 / dx
        return J
    d = np.diff(X)
    J = BandedMatrix.zeros(N, 1, 1)
    J.ab[1, :] = -2 * (d[1:] + d[:-1])
    J.ab[0, 1:] = 2 * d[1:-1]  # dg_i / dX_{i+1}
    J.ab[2, :-1] = 2 * d[1:-1]  # dg_{i+1} / dX_i
    return J


def solve_constraint_for_X(y, c: ConstraintSet, X_guess, Xmax=None, opts: NewtonOptions | None = None):
    """Solve g(y, X) = 0 for the interior positions at fixed field values.

    ``y`` holds all N+2 nodal values.  Newton with step halving; a trial that
    breaks monotonicity of X is halved as well.
    """
    opts = opts or NewtonOptions()
    y = np.asarray(y, dtype=float)
    N = c.N
    X_guess = np.asarray(X_guess, dtype=float)
    if X_guess.size == N + 2:
        Xmax = X_guess[-1] if Xmax is None else Xmax
        X_guess = X_guess[1:-1]
    if Xmax is None:
        raise ValueError("Xmax is required when X_guess holds interior nodes only")
    Xf = np.concatenate([[0.0], X_guess, [Xmax]])
    if np.any(np.diff(Xf) <= 0):
        raise MeshCrossing("initial guess for X is not strictly increasing")

    def resid(Xi):
        Xf[1:-1] = Xi
        return g(DofState(y, Xf), c)

    Xi = X_guess.copy()
    r = resid(Xi)
    hist = [np.abs(r).max()]
    for _ in range(opts.max_iters):
        if hist[-1] <= opts.tol_residual:
            Xf[1:-1] = Xi
            return Xi
        Xf[1:-1] = Xi
        dX = lu_banded_solve(_X_jacobian(y, Xf, c), -r)
        theta = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = Xi + theta * dX
            full = np.concatenate([[0.0], trial, [Xmax]])
            if np.all(np.diff(full) > 0):
                rt = resid(trial)
                if np.dot(rt, rt) < np.dot(r, r):
                    break
            theta *= 0.5
        else:
            if not np.all(np.diff(full) > 0):
                raise MeshCrossing("mesh solve could not keep X monotone", x=Xi)
            raise NoConvergence("mesh solve line search failed", x=Xi, residuals=hist)
        Xi, r = trial, rt
        hist.append(np.abs(r).max())
    if hist[-1] <= opts.tol_residual:
        return Xi
    raise NoConvergence("mesh solve did not converge", x=Xi, residuals=hist)
