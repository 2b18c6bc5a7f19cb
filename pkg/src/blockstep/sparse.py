"""Sparse matrix and block-vector storage with the kernels the solvers use.

``CsrMatrix`` holds every sparse operator (mass, stiffness, Jacobians).
``BlockVector`` is an ``N x k`` dense block stored row-major, so the ``k``
entries belonging to one row are adjacent in memory.  The spBOP kernel then
streams ``k`` contiguous values for every matrix nonzero, which is the form a
compiler can vectorize.

All kernels accumulate each row left to right in 64-bit arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not match."""


# ---------------------------------------------------------------------------
# kernels

@numba.njit(cache=True)
def _spmv_kernel(indptr, indices, data, x, out):
    n = indptr.shape[0] - 1
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = acc


@numba.njit(cache=True)
def _spbop_kernel(indptr, indices, data, X, out):
    n = indptr.shape[0] - 1
    k = X.shape[1]
    for i in range(n):
        for c in range(k):
            out[i, c] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(k):
                out[i, c] += a * X[j, c]


# ---------------------------------------------------------------------------
# CSR

@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with sorted, unique column indices."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0 or ro[-1] != ci.size:
            raise ShapeError("row_offsets inconsistent with nonzero count")
        if ci.size != va.size:
            raise ShapeError("col_indices and values differ in length")
        if np.any(np.diff(ro) < 0):
            raise ShapeError("row_offsets must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ShapeError("column index out of range")
        if ci.size > 1:
            same_row = np.ones(ci.size - 1, dtype=bool)
            starts = ro[1:-1]
            same_row[starts[(starts > 0) & (starts < ci.size)] - 1] = False
            if np.any(np.diff(ci)[same_row] <= 0):
                raise ShapeError("column indices must increase strictly within a row")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_triplets(cls, n_rows, n_cols, rows, cols, vals) -> "CsrMatrix":
        """Assemble from coordinate triplets; duplicates are summed."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ShapeError("triplet arrays differ in length")
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                          or cols.min() < 0 or cols.max() >= n_cols):
            raise ShapeError("triplet index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            first = np.ones(rows.size, dtype=bool)
            first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(first)
            vals = np.add.reduceat(vals, starts)
            rows, cols = rows[starts], cols[starts]
        counts = np.bincount(rows, minlength=n_rows)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return cls(n_rows, n_cols, offsets, cols, vals)

    @classmethod
    def from_dense(cls, a, drop_zeros: bool = True) -> "CsrMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a) if drop_zeros else np.indices(a.shape).reshape(2, -1)
        return cls.from_triplets(a.shape[0], a.shape[1], r, c, a[r, c])

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.full(n, scale))

    @classmethod
    def diag(cls, d) -> "CsrMatrix":
        d = np.asarray(d, dtype=np.float64)
        n = d.size
        return cls(n, n, np.arange(n + 1), np.arange(n), d.copy())

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.row_indices(), self.col_indices), self.values)
        return out

    def to_scipy(self):
        import scipy.sparse as sp
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets),
                             shape=self.shape)

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        coo = m.tocoo()
        return cls.from_triplets(m.shape[0], m.shape[1], coo.row, coo.col, coo.data)

    def diagonal(self) -> np.ndarray:
        rows = self.row_indices()
        d = np.zeros(min(self.shape))
        hit = rows == self.col_indices
        d[rows[hit]] = self.values[hit]
        return d

    def with_values(self, values) -> "CsrMatrix":
        """Same sparsity pattern, new values."""
        return CsrMatrix(self.n_rows, self.n_cols, self.row_offsets,
                         self.col_indices, values)

    def scaled(self, alpha: float) -> "CsrMatrix":
        return self.with_values(alpha * self.values)

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_triplets(self.n_cols, self.n_rows, self.col_indices,
                                       self.row_indices(), self.values)

    def __matmul__(self, x):
        if isinstance(x, BlockVector):
            return spbop(self, x)
        x = np.asarray(x)
        if x.ndim == 1:
            return spmv(self, x)
        return spbop(self, BlockVector(x)).array


def linear_combination(alpha: float, a: CsrMatrix, beta: float, b: CsrMatrix) -> CsrMatrix:
    """``alpha*a + beta*b`` on the union of both sparsity patterns."""
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    if (a.nnz == b.nnz and np.array_equal(a.row_offsets, b.row_offsets)
            and np.array_equal(a.col_indices, b.col_indices)):
        return a.with_values(alpha * a.values + beta * b.values)
    return CsrMatrix.from_triplets(
        a.n_rows, a.n_cols,
        np.concatenate((a.row_indices(), b.row_indices())),
        np.concatenate((a.col_indices, b.col_indices)),
        np.concatenate((alpha * a.values, beta * b.values)),
    )


# ---------------------------------------------------------------------------
# block vectors

class BlockVector:
    """``N x k`` block of right-hand sides, row-major (the ``k`` axis is contiguous).

    The block owns a C-contiguous float64 array; ``array`` exposes it as a
    2-D view and ``data`` as the flat storage.  Instances are mutable.
    """

    __slots__ = ("_a",)

    def __init__(self, array, copy: bool = False):
        a = np.array(array, dtype=np.float64, order="C", copy=copy or None, ndmin=2)
        if a.ndim != 2:
            raise ShapeError("BlockVector needs a 2-D array")
        self._a = np.ascontiguousarray(a)

    @classmethod
    def zeros(cls, n_rows: int, width: int) -> "BlockVector":
        return cls(np.zeros((n_rows, width)))

    @classmethod
    def from_columns(cls, columns) -> "BlockVector":
        return cls(np.column_stack([np.asarray(c, dtype=np.float64) for c in columns]))

    @property
    def n_rows(self) -> int:
        return self._a.shape[0]

    @property
    def width(self) -> int:
        return self._a.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self._a

    @property
    def data(self) -> np.ndarray:
        return self._a.reshape(-1)

    def offset(self, i: int, c: int) -> int:
        """Position of entry ``(i, c)`` in ``data``."""
        return i * self.width + c

    def get(self, i: int, c: int) -> float:
        return float(self.data[self.offset(i, c)])

    def set(self, i: int, c: int, v: float) -> None:
        self.data[self.offset(i, c)] = v

    def column(self, c: int) -> np.ndarray:
        return self._a[:, c].copy()

    def copy(self) -> "BlockVector":
        return BlockVector(self._a, copy=True)

    def __repr__(self):
        return f"BlockVector(n_rows={self.n_rows}, width={self.width})"

    # raw little-endian dump: two uint64 (n_rows, width) then float64 data
    def dump(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<QQ", self.n_rows, self.width))
            fh.write(self.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "BlockVector":
        raw = Path(path).read_bytes()
        n, k = struct.unpack_from("<QQ", raw)
        data = np.frombuffer(raw, dtype="<f8", offset=16, count=n * k)
        return cls(data.reshape(n, k).astype(np.float64))


@dataclass(frozen=True, eq=False)
class SmallDense:
    """Small dense coefficient matrix (stage couplings); stored column-major."""

    rows: int
    cols: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.rows * self.cols:
            raise ShapeError(f"{v.size} values for a {self.rows}x{self.cols} matrix")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, a) -> "SmallDense":
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        return cls(a.shape[0], a.shape[1], a.ravel(order="F"))

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape((self.rows, self.cols), order="F")

    def __getitem__(self, ij):
        return self.array[ij]


# ---------------------------------------------------------------------------
# operations

def spmv(a: CsrMatrix, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 1 or a.n_cols != x.size:
        raise ShapeError(f"spmv: matrix has {a.n_cols} columns, vector {x.shape}")
    out = np.empty(a.n_rows)
    _spmv_kernel(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def spbop_array(a: CsrMatrix, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """spBOP on a raw C-contiguous ``(N, k)`` array."""
    if x.ndim != 2 or a.n_cols != x.shape[0]:
        raise ShapeError(f"spbop: matrix has {a.n_cols} columns, block {x.shape}")
    if not x.flags.c_contiguous:
        x = np.ascontiguousarray(x)
    if out is None:
        out = np.empty((a.n_rows, x.shape[1]))
    _spbop_kernel(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def spbop(a: CsrMatrix, x: BlockVector) -> BlockVector:
    """Apply ``a`` to every column of ``x`` in one sweep over the matrix."""
    return BlockVector(spbop_array(a, x.array))


def stage_couple(y: BlockVector, c) -> BlockVector:
    """Return ``Y C^T``: row ``i`` of the result is ``(row i of Y) C^T``."""
    cm = c.array if isinstance(c, SmallDense) else np.atleast_2d(np.asarray(c, dtype=np.float64))
    if cm.shape[1] != y.width:
        raise ShapeError(f"stage_couple: C has {cm.shape[1]} columns, Y width {y.width}")
    return BlockVector(y.array @ cm.T)


def _check_same(x: BlockVector, y: BlockVector):
    if (x.n_rows, x.width) != (y.n_rows, y.width):
        raise ShapeError(f"block shapes differ: {x.array.shape} vs {y.array.shape}")


def axpy_block(alpha: float, x: BlockVector, y: BlockVector) -> BlockVector:
    """In-place ``y += alpha * x``; returns ``y``."""
    _check_same(x, y)
    y.array[...] += alpha * x.array
    return y


def dot_columns(x: BlockVector, y: BlockVector) -> np.ndarray:
    _check_same(x, y)
    return np.einsum("ij,ij->j", x.array, y.array)


def norm_columns(x: BlockVector) -> np.ndarray:
    return np.sqrt(dot_columns(x, x))


# ---------------------------------------------------------------------------
# Matrix Market

def write_matrix_market(path, a: CsrMatrix) -> None:
    rows = a.row_indices()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.n_rows} {a.n_cols} {a.nnz}\n")
        for r, c, v in zip(rows, a.col_indices, a.values):
            fh.write(f"{r + 1} {c + 1} {float(v)!r}\n")


def read_matrix_market(path) -> CsrMatrix:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket") or "coordinate" not in header:
            raise ValueError("only Matrix Market coordinate files are supported")
        symmetric = "symmetric" in header
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        n, m, nnz = (int(t) for t in line.split())
        body = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    r = body[:, 0].astype(np.int64) - 1
    c = body[:, 1].astype(np.int64) - 1
    v = body[:, 2]
    if symmetric:
        off = r != c
        r, c, v = np.concatenate((r, c[off])), np.concatenate((c, r[off])), np.concatenate((v, v[off]))
    return CsrMatrix.from_triplets(n, m, r, c, v)
