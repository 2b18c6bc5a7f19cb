"""Linear convection-diffusion-reaction on the unit square, cell-centered finite volumes.

The conservative form ``u_t + div(-A grad u + b u) + c u = 0`` is discretized
with two-point diffusive fluxes and full upwinding of the convective flux.
Dirichlet faces use a half-cell diffusive flux towards the boundary value and
take the boundary value as upwind state on inflow.  Outflow faces carry the
convective flux of the cell value only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sparse import CsrMatrix
from .base import LinearProblem
from .grid import StructuredGrid


def _inflow_profile(t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    amp = abs(np.sin(2.0 * t))
    on_segment = (np.asarray(x) == 0.0) & (y > 0.25) & (y < 0.75 + 0.25 * amp)
    return np.where(on_segment, amp, 0.0)


@dataclass(frozen=True)
class ConvDiffData:
    """Coefficients and boundary data; Dirichlet sides are named ``left/right/bottom/top``."""

    diffusion: float = 1e-10
    velocity: tuple[float, float] = (1.0, -0.5)
    reaction: float = 1.0
    dirichlet_sides: tuple[str, ...] = ("left", "top")
    boundary_value: object = _inflow_profile

    def __post_init__(self):
        if self.diffusion < 0.0:
            raise ValueError("diffusion coefficient must be non-negative")
        bad = set(self.dirichlet_sides) - {"left", "right", "bottom", "top"}
        if bad:
            raise ValueError(f"unknown boundary sides {sorted(bad)}")


class ConvDiffProblem(LinearProblem):
    """``M u' + K u = b(t)`` with ``M = h_x h_y I``."""

    def __init__(self, grid: StructuredGrid, data: ConvDiffData, mass, stiffness, faces):
        super().__init__(mass, stiffness)
        self.grid = grid
        self.data = data
        self._faces = faces  # (cells, coefficients, face x, face y) of Dirichlet faces

    def rhs(self, t):
        cells, coef, fx, fy = self._faces
        g = self.data.boundary_value(t, fx, fy)
        return np.bincount(cells, weights=coef * g, minlength=self.n)

    def boundary_flux(self, t: float, u: np.ndarray) -> float:
        """Net outward flux through the boundary for state ``u`` at time ``t``."""
        return float(np.sum(_boundary_outflux(self.grid, self.data, t, u)))


def _sides(grid: StructuredGrid):
    """Per side: boundary cells, outward normal, face length, face centers."""
    g = grid
    ix, iy = np.arange(g.nx), np.arange(g.ny)
    xc = (ix + 0.5) * g.hx
    yc = (iy + 0.5) * g.hy
    return {
        "left": (g.cell(0, iy), (-1.0, 0.0), g.hy, np.zeros(g.ny), yc),
        "right": (g.cell(g.nx - 1, iy), (1.0, 0.0), g.hy, np.full(g.ny, g.lx), yc),
        "bottom": (g.cell(ix, 0), (0.0, -1.0), g.hx, xc, np.zeros(g.nx)),
        "top": (g.cell(ix, g.ny - 1), (0.0, 1.0), g.hx, xc, np.full(g.nx, g.ly)),
    }


def _boundary_outflux(grid, data, t, u):
    bx, by = data.velocity
    out = []
    for side, (cells, (nx_, ny_), length, fx, fy) in _sides(grid).items():
        vn = (bx * nx_ + by * ny_) * length
        if side in data.dirichlet_sides:
            half = 0.5 * (grid.hx if nx_ != 0.0 else grid.hy)
            g = data.boundary_value(t, fx, fy)
            upw = u[cells] if vn > 0.0 else g
            out.append(data.diffusion * length / half * (u[cells] - g) + vn * upw)
        else:
            out.append(max(vn, 0.0) * u[cells])
    return np.concatenate(out)


def assemble_convdiff(grid: StructuredGrid, data: ConvDiffData | None = None) -> ConvDiffProblem:
    data = data or ConvDiffData()
    g = grid
    a, (bx, by), c = data.diffusion, data.velocity, data.reaction
    vol = g.hx * g.hy
    rows, cols, vals = [], [], []

    def add(r, cc, v):
        rows.append(np.asarray(r).ravel())
        cols.append(np.asarray(cc).ravel())
        vals.append(np.broadcast_to(v, np.shape(r)).ravel().astype(float))

    # interior faces: flux from P to Q is D (u_P - u_Q) + vn * upwind(u)
    for (p, q, d, vn) in (
        (g.cell(*np.meshgrid(np.arange(g.nx - 1), np.arange(g.ny))),
         g.cell(*np.meshgrid(np.arange(1, g.nx), np.arange(g.ny))),
         a * g.hy / g.hx, bx * g.hy),
        (g.cell(*np.meshgrid(np.arange(g.nx), np.arange(g.ny - 1))),
         g.cell(*np.meshgrid(np.arange(g.nx), np.arange(1, g.ny))),
         a * g.hx / g.hy, by * g.hx),
    ):
        up, dn = max(vn, 0.0), min(vn, 0.0)
        add(p, p, d + up)
        add(p, q, -d + dn)
        add(q, p, -d - up)
        add(q, q, d - dn)

    add(np.arange(g.n_cells), np.arange(g.n_cells), c * vol)

    fcells, fcoef, ffx, ffy = [], [], [], []
    for side, (cells, (nx_, ny_), length, fx, fy) in _sides(g).items():
        vn = (bx * nx_ + by * ny_) * length
        if side in data.dirichlet_sides:
            half = 0.5 * (g.hx if nx_ != 0.0 else g.hy)
            dd = a * length / half
            add(cells, cells, dd + max(vn, 0.0))
            fcells.append(cells)
            fcoef.append(np.full(cells.size, dd - min(vn, 0.0)))
            ffx.append(fx)
            ffy.append(fy)
        else:
            add(cells, cells, max(vn, 0.0))

    k = CsrMatrix.from_triplets(g.n_cells, g.n_cells, np.concatenate(rows),
                                np.concatenate(cols), np.concatenate(vals))
    m = CsrMatrix.diag(np.full(g.n_cells, vol))
    faces = (np.concatenate(fcells), np.concatenate(fcoef),
             np.concatenate(ffx), np.concatenate(ffy))
    return ConvDiffProblem(g, data, m, k, faces)
