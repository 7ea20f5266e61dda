"""Newton iteration, banded LU and finite-difference Jacobians.

Every stepper in the package funnels its implicit equations through
:func:`newton_solve`.  The Jacobian callback may return a dense array, a
:class:`BandedMatrix` or a scipy sparse matrix; the linear solve is picked
accordingly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import MeshCrossing, NoConvergence, SingularJacobian, SingularMatrix

PIVOT_RTOL = 1e-14


class BandedMatrix:
    """Square matrix in LAPACK band storage.

    ``ab[upper + i - j, j] == A[i, j]`` for ``-lower <= j - i <= upper``.
    """

    def __init__(self, ab, lower, upper):
        ab = np.asarray(ab, dtype=float)
        if ab.shape[0] != lower + upper + 1:
            raise ValueError("band storage has the wrong number of rows")
        self.ab = ab
        self.lower = int(lower)
        self.upper = int(upper)

    @property
    def n(self):
        return self.ab.shape[1]

    @property
    def shape(self):
        return (self.n, self.n)

    @classmethod
    def zeros(cls, n, lower, upper):
        return cls(np.zeros((lower + upper + 1, n)), lower, upper)

    @classmethod
    def from_dense(cls, A, lower, upper):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        i, j = np.nonzero(A)
        if np.any(j - i > upper) or np.any(i - j > lower):
            raise ValueError("matrix has entries outside the declared band")
        out = cls.zeros(n, lower, upper)
        for k in range(max(-lower, 1 - n), min(upper, n - 1) + 1):
            d = np.diagonal(A, k)
            if k >= 0:
                out.ab[upper - k, k:] = d
            else:
                out.ab[upper - k, : n + k] = d
        return out

    @classmethod
    def from_sparse(cls, A, lower=None, upper=None):
        A = sp.coo_matrix(A)
        offs = A.col - A.row
        if lower is None:
            lower = max(0, -int(offs.min(initial=0)))
        if upper is None:
            upper = max(0, int(offs.max(initial=0)))
        if np.any(offs < -lower) or np.any(offs > upper):
            raise ValueError("matrix has entries outside the declared band")
        out = cls.zeros(A.shape[0], lower, upper)
        np.add.at(out.ab, (upper - offs, A.col), A.data)
        return out

    def add_entries(self, rows, cols, vals):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        np.add.at(self.ab, (self.upper + rows - cols, cols), vals)

    def to_dense(self):
        n = self.n
        A = np.zeros((n, n))
        for k in range(-self.lower, self.upper + 1):
            row = self.upper - k
            if k >= 0:
                idx = np.arange(n - k)
                A[idx, idx + k] = self.ab[row, k:]
            else:
                idx = np.arange(n + k)
                A[idx - k, idx] = self.ab[row, : n + k]
        return A

    def to_sparse(self):
        offsets = list(range(self.upper, -self.lower - 1, -1))
        data = np.zeros_like(self.ab)
        # dia_matrix stores column-aligned diagonals, which is what ab holds.
        data[:] = self.ab
        return sp.dia_matrix((data, offsets), shape=self.shape).tocsr()

    def matvec(self, x):
        return self.to_sparse() @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def transpose(self):
        return BandedMatrix.from_sparse(self.to_sparse().T, self.upper, self.lower)

    @property
    def T(self):
        return self.transpose()

    def norm_inf(self):
        return float(np.abs(self.to_sparse()).sum(axis=1).max(initial=0.0))

    def is_symmetric(self, tol=0.0):
        if self.lower != self.upper:
            return False
        return bool(np.abs(self.to_dense() - self.to_dense().T).max(initial=0.0) <= tol)

    def lu(self):
        """Return the band LU factors (``lu``, ``ipiv``) from LAPACK dgbtrf."""
        kl, ku = self.lower, self.upper
        work = np.zeros((2 * kl + ku + 1, self.n))
        work[kl:, :] = self.ab
        lu, ipiv, info = lapack.dgbtrf(work, kl, ku)
        if info < 0:
            raise ValueError(f"dgbtrf: illegal argument {-info}")
        diag = lu[kl + ku, :]
        scale = np.abs(self.ab).max(initial=0.0)
        if info > 0 or scale == 0.0 or np.abs(diag).min() <= PIVOT_RTOL * scale:
            raise SingularMatrix(
                "banded matrix is singular to working precision",
                min_pivot=float(np.abs(diag).min()),
                scale=float(scale),
            )
        return lu, ipiv

    def det(self):
        """Determinant from the band LU factorization (0.0 if singular)."""
        kl, ku = self.lower, self.upper
        work = np.zeros((2 * kl + ku + 1, self.n))
        work[kl:, :] = self.ab
        lu, ipiv, info = lapack.dgbtrf(work, kl, ku)
        if info > 0:
            return 0.0
        sign = (-1.0) ** np.count_nonzero(ipiv != np.arange(self.n))
        return float(sign * np.prod(lu[kl + ku, :]))


def _band_solve(A, lu, ipiv, b):
    x, info = lapack.dgbtrs(lu, A.lower, A.upper, np.asarray(b, dtype=float), ipiv)
    if info != 0 or not np.all(np.isfinite(x)):
        raise SingularMatrix("banded solve produced non-finite values")
    return x


def lu_banded_solve(A: BandedMatrix, b):
    """Solve ``A x = b`` by band LU with partial pivoting."""
    lu, ipiv = A.lu()
    return _band_solve(A, lu, ipiv, b)


def fd_jacobian(F, x, step=None):
    """Centered-difference Jacobian of ``F`` at ``x``.

    The default step is ``1e-6 * (1 + max|x|)``.
    """
    x = np.asarray(x, dtype=float)
    if step is None:
        step = 1e-6 * (1.0 + np.abs(x).max(initial=0.0))
    if step <= 0:
        raise ValueError("step must be positive")
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((np.atleast_1d(F(x + e)) - np.atleast_1d(F(x - e))) / (2 * step))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


@dataclass
class NewtonOptions:
    tol_residual: float = 1e-10
    tol_step: float = 1e-12
    max_iters: int = 50
    damping: str | None = "halving"
    max_halvings: int = 8

    def __post_init__(self):
        if self.tol_residual <= 0 or self.tol_step <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.damping not in (None, "none", "halving"):
            raise ValueError(f"unknown damping mode {self.damping!r}")


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residuals: list = field(default_factory=list)


def factorize(J):
    """LU-factor a Jacobian (dense, BandedMatrix or sparse); returns a solve callable."""
    if isinstance(J, BandedMatrix):
        try:
            lu, ipiv = J.lu()
        except SingularMatrix as exc:
            raise SingularJacobian(str(exc), **exc.details) from exc
        return lambda rhs: _band_solve(J, lu, ipiv, rhs)
    if sp.issparse(J):
        A = sp.csc_matrix(J)
        scale = abs(A).max() if A.nnz else 0.0
        try:
            lu = spla.splu(A)
        except RuntimeError as exc:
            raise SingularJacobian(f"sparse LU failed: {exc}") from exc
        piv = np.abs(lu.U.diagonal()).min(initial=np.inf)
        if scale == 0.0 or piv <= PIVOT_RTOL * scale:
            raise SingularJacobian("sparse Jacobian is singular", min_pivot=float(piv))
        return lu.solve
    J = np.atleast_2d(np.asarray(J, dtype=float))
    scale = np.abs(J).max(initial=0.0)
    lu, piv = scipy.linalg.lu_factor(J, check_finite=True)
    if scale == 0.0 or np.abs(np.diag(lu)).min() <= PIVOT_RTOL * scale:
        raise SingularJacobian("dense Jacobian is singular", min_pivot=float(np.abs(np.diag(lu)).min()))
    return lambda rhs: scipy.linalg.lu_solve((lu, piv), rhs)


def solve_linear(J, rhs):
    """Solve ``J x = rhs`` for the Jacobian types accepted by newton_solve."""
    return factorize(J)(np.asarray(rhs, dtype=float))


SPARSE_LU_THRESHOLD = 300


def dense_block_matrix(grid):
    """Counterpart of ``scipy.sparse.bmat`` assembled in a dense buffer.

    Blocks may be dense arrays, sparse matrices or None; every block row and
    block column needs at least one non-None entry.  Systems larger than
    SPARSE_LU_THRESHOLD come back in CSC form so newton_solve factors them
    with sparse LU.
    """
    rows = [next(b.shape[0] for b in row if b is not None) for row in grid]
    cols = [next(grid[i][j].shape[1] for i in range(len(grid)) if grid[i][j] is not None)
            for j in range(len(grid[0]))]
    ro = np.concatenate([[0], np.cumsum(rows)])
    co = np.concatenate([[0], np.cumsum(cols)])
    out = np.zeros((ro[-1], co[-1]))
    for i, row in enumerate(grid):
        for j, blk in enumerate(row):
            if blk is None:
                continue
            if sp.issparse(blk):
                blk = blk.toarray()
            out[ro[i]:ro[i + 1], co[j]:co[j + 1]] = blk
    if out.shape[0] > SPARSE_LU_THRESHOLD:
        return sp.csc_matrix(out)
    return out


def _norm(v):
    return float(np.abs(v).max(initial=0.0))


def _linear_rate(steps):
    """True when the last three step ratios show plain linear contraction."""
    if len(steps) < 4:
        return False
    ratios = [steps[k + 1] / steps[k] for k in range(len(steps) - 4, len(steps) - 1) if steps[k] > 0]
    return len(ratios) == 3 and all(0.25 <= q < 1.0 for q in ratios)


def newton_solve(F, J, x0, opts: NewtonOptions | None = None) -> NewtonResult:
    """Damped Newton iteration for ``F(x) = 0``.

    Termination needs both ``max|F(x)| <= tol_residual`` and a last step no
    longer than ``tol_step * (1 + max|x|)``.  When the residual test passes
    first, one polishing step with the already factored Jacobian is taken and
    the result accepted.  A full-step sequence that only contracts linearly
    signals a singular Jacobian at the root and raises ``SingularJacobian``.
    A step below ``tol_step`` with the residual still above tolerance raises
    ``NoConvergence``.  With halving damping a trial point is accepted when it
    lowers the 2-norm of the residual; trial points that raise
    ``MeshCrossing`` are halved as well.
    """
    opts = opts or NewtonOptions()
    x = np.array(x0, dtype=float)
    r = np.asarray(F(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise NoConvergence("non-finite residual at the initial guess", x=x, residuals=[np.inf])
    hist = [_norm(r)]
    damped = opts.damping == "halving"
    solve = None
    last_step = None
    full_steps = []

    def small(step):
        return step <= opts.tol_step * (1.0 + _norm(x))

    it = 0
    while True:
        if hist[-1] <= opts.tol_residual:
            if _linear_rate(full_steps):
                raise SingularJacobian(
                    "Newton converged only linearly; the Jacobian is singular at the root",
                    x=x, residuals=hist,
                )
            if last_step is None or small(last_step) or solve is None:
                return NewtonResult(x, it, hist)
            xp = x + solve(-r)
            rp = np.asarray(F(xp), dtype=float)
            if np.all(np.isfinite(rp)) and _norm(rp) <= max(hist[-1], opts.tol_residual):
                hist.append(_norm(rp))
                return NewtonResult(xp, it, hist)
            return NewtonResult(x, it, hist)
        if it >= opts.max_iters:
            break
        it += 1
        solve = factorize(J(x))
        dx = solve(-r)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("Newton step is not finite", x=x, residuals=hist)
        theta = 1.0
        halvings = opts.max_halvings if damped else 0
        merit = float(np.dot(r, r))
        crossing = None
        for _ in range(halvings + 1):
            xt = x + theta * dx
            try:
                rt = np.asarray(F(xt), dtype=float)
                crossing = None
            except MeshCrossing as exc:
                crossing = exc
                rt = None
            ok = rt is not None and np.all(np.isfinite(rt))
            if ok and (not damped or float(np.dot(rt, rt)) < merit):
                break
            theta *= 0.5
        else:
            if crossing is not None:
                raise crossing
            raise NoConvergence(
                "line search failed to reduce the residual", x=x, residuals=hist
            )
        last_step = theta * _norm(dx)
        if theta == 1.0:
            full_steps.append(last_step)
        else:
            full_steps.clear()
            solve = None
        x, r = xt, rt
        hist.append(_norm(r))
        if hist[-1] > opts.tol_residual and small(last_step):
            raise NoConvergence("Newton iteration stagnated", x=x, residuals=hist)
    raise NoConvergence(
        f"no convergence in {opts.max_iters} iterations (residual {hist[-1]:.3e})",
        x=x,
        residuals=hist,
    )
