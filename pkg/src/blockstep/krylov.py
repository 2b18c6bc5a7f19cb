"""Block Krylov solvers for ``A X = B`` with a block of right-hand sides.

Both solvers exchange information between columns through ``k x k`` block
inner products.  Small dense systems are solved with a rank-revealing,
equilibrated LU so that linearly dependent columns (duplicated right-hand
sides are common after a pipeline shift) are dropped instead of causing a
breakdown.  With ``k == 1`` the dense solves degenerate to a plain division
and the iterates are those of the textbook scalar methods.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .sparse import BlockVector, CsrMatrix, ShapeError, spbop_array

PIVOT_DROP = 1e-13


class PreconditionerSetupError(ValueError):
    """Preconditioner cannot be built for the given matrix."""


class ConvergenceMode(str, enum.Enum):
    ALL_COLUMNS = "all_columns"
    FIRST_COLUMN = "first_column"


@dataclass
class SolveSettings:
    reduction: float = 1e-8
    max_iters: int = 1000
    convergence_mode: ConvergenceMode = ConvergenceMode.ALL_COLUMNS

    def __post_init__(self):
        self.convergence_mode = ConvergenceMode(self.convergence_mode)
        if not 0.0 < self.reduction < 1.0:
            raise ValueError(f"reduction must lie in (0, 1), got {self.reduction}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class KrylovReport:
    iterations: int
    converged: bool
    final_defects: np.ndarray
    initial_defects: np.ndarray
    setup_time: float = 0.0
    solve_time: float = 0.0
    breakdown: str | None = None
    breakdown_column: int | None = None
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# preconditioners

@numba.njit(cache=True)
def _diag_positions(indptr, indices):
    n = indptr.shape[0] - 1
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                pos[i] = p
                break
    return pos


@numba.njit(cache=True)
def _ilu0_factor(indptr, indices, lu, diag):
    n = indptr.shape[0] - 1
    for i in range(n):
        end = indptr[i + 1]
        for p in range(indptr[i], diag[i]):
            k = indices[p]
            lu[p] /= lu[diag[k]]
            q = p + 1
            r = diag[k] + 1
            rend = indptr[k + 1]
            while q < end and r < rend:
                if indices[q] == indices[r]:
                    lu[q] -= lu[p] * lu[r]
                    q += 1
                    r += 1
                elif indices[q] < indices[r]:
                    q += 1
                else:
                    r += 1
        if lu[diag[i]] == 0.0:
            return i
    return -1


@numba.njit(cache=True)
def _ilu0_apply(indptr, indices, lu, diag, rhs, out):
    n = indptr.shape[0] - 1
    k = rhs.shape[1]
    for i in range(n):
        for c in range(k):
            out[i, c] = rhs[i, c]
        for p in range(indptr[i], diag[i]):
            a = lu[p]
            j = indices[p]
            for c in range(k):
                out[i, c] -= a * out[j, c]
    for i in range(n - 1, -1, -1):
        for p in range(diag[i] + 1, indptr[i + 1]):
            a = lu[p]
            j = indices[p]
            for c in range(k):
                out[i, c] -= a * out[j, c]
        d = lu[diag[i]]
        for c in range(k):
            out[i, c] /= d


@numba.njit(cache=True)
def _ssor_apply(indptr, indices, data, diag, omega, rhs, out):
    n = indptr.shape[0] - 1
    k = rhs.shape[1]
    acc = np.empty(k)
    for i in range(n):
        for c in range(k):
            out[i, c] = 0.0
    for i in range(n):
        for c in range(k):
            acc[c] = rhs[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(k):
                acc[c] -= a * out[j, c]
        d = data[diag[i]]
        for c in range(k):
            out[i, c] += omega * acc[c] / d
    for i in range(n - 1, -1, -1):
        for c in range(k):
            acc[c] = rhs[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(k):
                acc[c] -= a * out[j, c]
        d = data[diag[i]]
        for c in range(k):
            out[i, c] += omega * acc[c] / d


class Preconditioner:
    """Approximate inverse applied identically to every column of a block."""

    kind = "identity"

    def __init__(self):
        self.setup_time = 0.0

    def apply_array(self, r: np.ndarray) -> np.ndarray:
        return r.copy()

    def apply(self, r: BlockVector) -> BlockVector:
        return BlockVector(self.apply_array(r.array))


def _checked_diagonal(a: CsrMatrix) -> np.ndarray:
    if a.n_rows != a.n_cols:
        raise ShapeError("preconditioner needs a square matrix")
    pos = _diag_positions(a.row_offsets, a.col_indices)
    missing = np.flatnonzero(pos < 0)
    if missing.size:
        raise PreconditionerSetupError(f"zero diagonal entry in row {missing[0]}")
    zero = np.flatnonzero(a.values[pos] == 0.0)
    if zero.size:
        raise PreconditionerSetupError(f"zero diagonal entry in row {zero[0]}")
    return pos


class Jacobi(Preconditioner):
    kind = "jacobi"

    def __init__(self, a: CsrMatrix):
        super().__init__()
        t0 = time.perf_counter()
        pos = _checked_diagonal(a)
        self.inv_diag = (1.0 / a.values[pos])[:, None]
        self.setup_time = time.perf_counter() - t0

    def apply_array(self, r):
        return r * self.inv_diag


class SSOR(Preconditioner):
    """One symmetric Gauss-Seidel sweep (forward then backward) from zero."""

    kind = "ssor"

    def __init__(self, a: CsrMatrix, omega: float = 1.0):
        super().__init__()
        if not 0.0 < omega < 2.0:
            raise PreconditionerSetupError(f"SSOR relaxation must lie in (0, 2), got {omega}")
        t0 = time.perf_counter()
        self.a = a
        self.omega = float(omega)
        self.diag = _checked_diagonal(a)
        self.setup_time = time.perf_counter() - t0

    def apply_array(self, r):
        r = np.ascontiguousarray(r)
        out = np.empty_like(r)
        _ssor_apply(self.a.row_offsets, self.a.col_indices, self.a.values,
                    self.diag, self.omega, r, out)
        return out


class ILU0(Preconditioner):
    """Incomplete LU factorization restricted to the sparsity pattern of ``a``."""

    kind = "ilu0"

    def __init__(self, a: CsrMatrix):
        super().__init__()
        t0 = time.perf_counter()
        self.diag = _checked_diagonal(a)
        self.a = a
        self.lu = a.values.copy()
        bad = _ilu0_factor(a.row_offsets, a.col_indices, self.lu, self.diag)
        if bad >= 0:
            raise PreconditionerSetupError(f"zero pivot in ILU(0) at row {bad}")
        self.setup_time = time.perf_counter() - t0

    def apply_array(self, r):
        r = np.ascontiguousarray(r)
        out = np.empty_like(r)
        _ilu0_apply(self.a.row_offsets, self.a.col_indices, self.lu, self.diag, r, out)
        return out


def make_preconditioner(kind: str, a: CsrMatrix, omega: float = 1.0) -> Preconditioner:
    """Build a preconditioner by name: ``identity``, ``jacobi``, ``ssor`` or ``ilu0``."""
    kind = kind.lower()
    if kind in ("identity", "none"):
        return Preconditioner()
    if kind == "jacobi":
        return Jacobi(a)
    if kind == "ssor":
        return SSOR(a, omega)
    if kind == "ilu0":
        return ILU0(a)
    raise ValueError(f"unknown preconditioner {kind!r}")


# ---------------------------------------------------------------------------
# small dense algebra

def pivoted_solve(g: np.ndarray, h: np.ndarray, tol: float = PIVOT_DROP):
    """Solve ``g x = h`` for a small ``k x k`` matrix, dropping dependent directions.

    Rows and columns are equilibrated, then eliminated with complete pivoting;
    elimination stops once the largest remaining pivot falls below ``tol``.
    Components of ``x`` belonging to dropped directions are zero.  Returns
    ``(x, rank, dropped)`` where ``dropped`` lists the discarded indices.
    """
    k = g.shape[0]
    if k == 1:
        if g[0, 0] == 0.0:
            return np.zeros_like(h), 0, [0]
        return h / g[0, 0], 1, []
    rmax = np.abs(g).max(axis=1)
    cmax = np.abs(g).max(axis=0)
    dr = np.where(rmax > 0, 1.0 / np.where(rmax > 0, rmax, 1.0), 0.0)
    dc = np.where(cmax > 0, 1.0 / np.where(cmax > 0, cmax, 1.0), 0.0)
    a = dr[:, None] * g * dc[None, :]
    b = dr[:, None] * h
    colp = np.arange(k)
    rank = 0
    for s in range(k):
        sub = np.abs(a[s:, s:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol:
            break
        i += s
        j += s
        if i != s:
            a[[s, i]] = a[[i, s]]
            b[[s, i]] = b[[i, s]]
        if j != s:
            a[:, [s, j]] = a[:, [j, s]]
            colp[[s, j]] = colp[[j, s]]
        f = a[s + 1:, s] / a[s, s]
        a[s + 1:, s:] -= np.outer(f, a[s, s:])
        b[s + 1:] -= np.outer(f, b[s])
        rank += 1
    y = np.zeros((k,) + h.shape[1:])
    for s in range(rank - 1, -1, -1):
        y[s] = (b[s] - a[s, s + 1:rank] @ y[s + 1:rank]) / a[s, s]
    x = np.zeros_like(y)
    x[colp[:rank]] = y[:rank]
    x *= dc.reshape((k,) + (1,) * (h.ndim - 1))
    return x, rank, sorted(int(c) for c in colp[rank:])


# ---------------------------------------------------------------------------
# solvers

def _col_norms(r: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->j", r, r))


def _converged(norms, targets, mode: ConvergenceMode) -> bool:
    if mode is ConvergenceMode.FIRST_COLUMN:
        return bool(norms[0] <= targets[0])
    return bool(np.all(norms <= targets))


def _prepare(a, b, x0, precond, settings):
    if a.n_rows != a.n_cols:
        raise ShapeError("block solver needs a square matrix")
    if b.n_rows != a.n_rows:
        raise ShapeError(f"right-hand side has {b.n_rows} rows, matrix {a.n_rows}")
    x = np.zeros_like(b.array) if x0 is None else x0.array.copy()
    if x.shape != b.array.shape:
        raise ShapeError("initial guess and right-hand side differ in shape")
    return x, precond or Preconditioner(), settings or SolveSettings()


def _column_scale(r: np.ndarray) -> np.ndarray:
    # unit-norm columns keep the k x k Gram matrices well scaled; k == 1 untouched
    if r.shape[1] == 1:
        return np.ones(1)
    n = _col_norms(r)
    return np.where(n > 0, n, 1.0)


def block_cg(a: CsrMatrix, b: BlockVector, x0: BlockVector | None = None,
             precond: Preconditioner | None = None,
             settings: SolveSettings | None = None):
    """Preconditioned block conjugate gradients for SPD ``a``.

    Returns ``(X, KrylovReport)``.  Defects are Euclidean norms of the
    unpreconditioned residual ``B - A X`` per column.
    """
    t0 = time.perf_counter()
    x, precond, settings = _prepare(a, b, x0, precond, settings)
    r = b.array - spbop_array(a, x)
    r0n = _col_norms(r)
    targets = settings.reduction * r0n
    scale = _column_scale(r)
    r = r / scale
    dx = np.zeros_like(r)
    norms = r0n.copy()
    history = [norms.copy()]
    it = 0
    breakdown = col = None
    converged = _converged(norms, targets, settings.convergence_mode)
    if not converged:
        z = precond.apply_array(r)
        p = z.copy()
        rho = z.T @ r
        while it < settings.max_iters:
            q = spbop_array(a, p)
            gamma = p.T @ q
            alpha, rank, dropped = pivoted_solve(gamma, rho)
            if rank == 0:
                breakdown, col = "singular block Gram matrix", (dropped[0] if dropped else 0)
                break
            dx += p @ alpha
            r -= q @ alpha
            it += 1
            norms = _col_norms(r) * scale
            history.append(norms.copy())
            if _converged(norms, targets, settings.convergence_mode):
                converged = True
                break
            z = precond.apply_array(r)
            rho_new = z.T @ r
            beta, rank, dropped = pivoted_solve(rho, rho_new)
            if rank == 0:
                breakdown, col = "singular block residual product", (dropped[0] if dropped else 0)
                break
            p = z + p @ beta
            rho = rho_new
    x += dx * scale
    final = _col_norms(b.array - spbop_array(a, x))
    report = KrylovReport(it, converged, final, r0n, precond.setup_time,
                          time.perf_counter() - t0, breakdown, col, history)
    return BlockVector(x), report


def block_bicgstab(a: CsrMatrix, b: BlockVector, x0: BlockVector | None = None,
                   precond: Preconditioner | None = None,
                   settings: SolveSettings | None = None):
    """Right-preconditioned block BiCGStab for nonsymmetric ``a``.

    Block coefficients come from ``k x k`` projections on a fixed shadow
    block; the stabilisation step uses one scalar over the whole block
    (Frobenius inner products).  A half step is accepted when it already
    meets the tolerance.
    """
    t0 = time.perf_counter()
    x, precond, settings = _prepare(a, b, x0, precond, settings)
    r = b.array - spbop_array(a, x)
    r0n = _col_norms(r)
    targets = settings.reduction * r0n
    scale = _column_scale(r)
    r = r / scale
    dx = np.zeros_like(r)
    norms = r0n.copy()
    history = [norms.copy()]
    it = 0
    breakdown = col = None
    converged = _converged(norms, targets, settings.convergence_mode)
    if not converged:
        shadow = r.copy()
        p = r.copy()
        while it < settings.max_iters:
            ph = precond.apply_array(p)
            v = spbop_array(a, ph)
            g = shadow.T @ v
            alpha, rank, dropped = pivoted_solve(g, shadow.T @ r)
            if rank == 0:
                breakdown, col = "rho breakdown", (dropped[0] if dropped else 0)
                break
            s = r - v @ alpha
            it += 1
            snorms = _col_norms(s) * scale
            if _converged(snorms, targets, settings.convergence_mode):
                dx += ph @ alpha
                r = s
                norms = snorms
                history.append(norms.copy())
                converged = True
                break
            sh = precond.apply_array(s)
            t = spbop_array(a, sh)
            tt = float(np.vdot(t, t))
            omega = float(np.vdot(t, s)) / tt if tt > 0.0 else 0.0
            if omega == 0.0 or not np.isfinite(omega):
                dx += ph @ alpha
                r = s
                breakdown, col = "omega breakdown", int(np.argmax(snorms))
                break
            dx += ph @ alpha + omega * sh
            r = s - omega * t
            norms = _col_norms(r) * scale
            history.append(norms.copy())
            if _converged(norms, targets, settings.convergence_mode):
                converged = True
                break
            beta, rank, dropped = pivoted_solve(g, -(shadow.T @ t))
            p = r + (p - omega * v) @ beta
    x += dx * scale
    final = _col_norms(b.array - spbop_array(a, x))
    report = KrylovReport(it, converged, final, r0n, precond.setup_time,
                          time.perf_counter() - t0, breakdown, col, history)
    return BlockVector(x), report


SOLVERS = {"cg": block_cg, "bicgstab": block_bicgstab}
