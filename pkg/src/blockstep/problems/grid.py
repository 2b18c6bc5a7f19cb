"""Structured rectangular grids and a vectorized bilinear (Q1) assembler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..sparse import CsrMatrix


@dataclass(frozen=True)
class StructuredGrid:
    """``nx x ny`` cells on ``[x0, x0+lx] x [y0, y0+ly]``.

    Cells are numbered ``j*nx + i`` and vertices ``j*(nx+1) + i`` (x fastest).
    """

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per direction")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("grid extents must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def cell(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def vertex(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def cell_centers(self):
        i, j = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return (self.x0 + (i.ravel() + 0.5) * self.hx, self.y0 + (j.ravel() + 0.5) * self.hy)

    def vertex_coords(self):
        i, j = np.meshgrid(np.arange(self.nx + 1), np.arange(self.ny + 1))
        return self.x0 + i.ravel() * self.hx, self.y0 + j.ravel() * self.hy


_G = 0.5 / math.sqrt(3.0)
_QPTS = np.array([(0.5 - _G, 0.5 - _G), (0.5 + _G, 0.5 - _G),
                  (0.5 + _G, 0.5 + _G), (0.5 - _G, 0.5 + _G)])
# local vertex order: (0,0), (1,0), (1,1), (0,1)
_CORNERS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)])


def _q1_reference():
    xi, eta = _QPTS[:, 0:1], _QPTS[:, 1:2]
    cx, cy = _CORNERS[:, 0][None, :], _CORNERS[:, 1][None, :]
    fx = np.where(cx == 1, xi, 1.0 - xi)
    fy = np.where(cy == 1, eta, 1.0 - eta)
    dfx = np.where(cx == 1, 1.0, -1.0)
    dfy = np.where(cy == 1, 1.0, -1.0)
    return fx * fy, dfx * fy, fx * dfy


class Q1Assembler:
    """Element loops for bilinear elements with 2x2 Gauss quadrature, vectorized over elements."""

    def __init__(self, grid: StructuredGrid):
        self.grid = grid
        g = grid
        i, j = np.meshgrid(np.arange(g.nx), np.arange(g.ny))
        i, j = i.ravel(), j.ravel()
        self.conn = np.stack([g.vertex(i + a, j + b) for a, b in _CORNERS], axis=1)
        phi, dxi, deta = _q1_reference()
        self.phi = phi                      # (q, a)
        self.dx = dxi / g.hx
        self.dy = deta / g.hy
        self.weight = g.hx * g.hy / 4.0
        self.qx = g.x0 + (i[:, None] + _QPTS[None, :, 0]) * g.hx   # (e, q)
        self.qy = g.y0 + (j[:, None] + _QPTS[None, :, 1]) * g.hy
        n = g.n_vertices
        rows = np.repeat(self.conn, 4, axis=1).ravel()
        cols = np.tile(self.conn, (1, 4)).ravel()
        keys = rows * n + cols
        ukeys, self._pos = np.unique(keys, return_inverse=True)
        r, c = ukeys // n, ukeys % n
        self._offsets = np.concatenate(([0], np.cumsum(np.bincount(r, minlength=n))))
        self._cols = c
        self.n = n

    def matrix(self, local: np.ndarray) -> CsrMatrix:
        """Assemble ``(E, 4, 4)`` element matrices (row = test, column = trial)."""
        vals = np.bincount(self._pos, weights=local.reshape(-1), minlength=self._cols.size)
        return CsrMatrix(self.n, self.n, self._offsets, self._cols, vals)

    def vector(self, local: np.ndarray) -> np.ndarray:
        return np.bincount(self.conn.ravel(), weights=local.reshape(-1), minlength=self.n)

    def at_quadrature(self, u: np.ndarray):
        """Values and gradients of a nodal field at the quadrature points, each ``(E, q)``."""
        ue = u[self.conn]
        return ue @ self.phi.T, ue @ self.dx.T, ue @ self.dy.T

    @cached_property
    def stiffness_kernel(self):
        return (np.einsum("qa,qb->qab", self.dx, self.dx)
                + np.einsum("qa,qb->qab", self.dy, self.dy))

    @cached_property
    def mass_kernel(self):
        return np.einsum("qa,qb->qab", self.phi, self.phi)

    def weighted_stiffness(self, coef: np.ndarray) -> CsrMatrix:
        """``int coef grad(phi_b) . grad(phi_a)`` with ``coef`` given per ``(E, q)``."""
        return self.matrix(self.weight * np.einsum("eq,qab->eab", coef, self.stiffness_kernel))

    def weighted_mass(self, coef: np.ndarray) -> CsrMatrix:
        return self.matrix(self.weight * np.einsum("eq,qab->eab", coef, self.mass_kernel))

    @cached_property
    def mass(self) -> CsrMatrix:
        return self.weighted_mass(np.ones(self.qx.shape))

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        m = self.mass
        return np.add.reduceat(m.values, m.row_offsets[:-1])

    def load(self, values: np.ndarray) -> np.ndarray:
        """``int v phi_a`` for ``v`` given per ``(E, q)``."""
        return self.vector(self.weight * values @ self.phi)

    def boundary_vertices(self, side: str) -> np.ndarray:
        g = self.grid
        if side == "left":
            return g.vertex(0, np.arange(g.ny + 1))
        if side == "right":
            return g.vertex(g.nx, np.arange(g.ny + 1))
        if side == "bottom":
            return g.vertex(np.arange(g.nx + 1), 0)
        if side == "top":
            return g.vertex(np.arange(g.nx + 1), g.ny)
        raise ValueError(side)
