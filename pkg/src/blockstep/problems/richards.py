"""Richards' equation with van Genuchten closure, bilinear elements and the L-scheme.

Pressure-head form on a vertical cross-section ``(x, z)``::

    theta(psi)_t - div(K(psi) (grad psi + e_z)) = 0

The time derivative acts on the row-sum lumped water content
``M_L theta(psi)``.  The L-scheme replaces ``theta'`` by a constant ``L`` and
freezes the conductivity, so each outer iteration solves with
``(L/tau) M_L + A(psi^j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sparse import CsrMatrix
from .base import Linearization, ProblemOps
from .grid import Q1Assembler, StructuredGrid


@dataclass(frozen=True)
class VanGenuchtenSoil:
    """Silt loam defaults.

    ``conductivity_saturation`` selects the saturation entering ``K``:
    ``"relative"`` uses ``theta/theta_S`` (the closure as commonly printed for
    this benchmark), ``"effective"`` uses ``(theta-theta_R)/(theta_S-theta_R)``
    which lets ``K`` vanish for very dry soil.
    """

    theta_s: float = 0.396
    theta_r: float = 0.131
    alpha: float = 0.423
    n: float = 2.06
    k_s: float = 4.96e-2
    lipschitz: float = 4.501e-2
    conductivity_saturation: str = "relative"

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s:
            raise ValueError("need 0 <= theta_R < theta_S")
        if self.n <= 1.0:
            raise ValueError("van Genuchten n must exceed 1")
        if self.alpha <= 0.0 or self.k_s <= 0.0:
            raise ValueError("alpha and K_S must be positive")
        if self.conductivity_saturation not in ("relative", "effective"):
            raise ValueError("conductivity_saturation is 'relative' or 'effective'")


def water_content(psi, soil: VanGenuchtenSoil):
    psi = np.asarray(psi, dtype=float)
    m = (soil.n - 1.0) / soil.n
    neg = np.minimum(psi, 0.0)
    se = (1.0 + (-soil.alpha * neg) ** soil.n) ** (-m)
    return np.where(psi > 0.0, soil.theta_s, soil.theta_r + (soil.theta_s - soil.theta_r) * se)


def conductivity_from_theta(theta, soil: VanGenuchtenSoil):
    theta = np.asarray(theta, dtype=float)
    m = (soil.n - 1.0) / soil.n
    if soil.conductivity_saturation == "relative":
        s = theta / soil.theta_s
    else:
        s = (theta - soil.theta_r) / (soil.theta_s - soil.theta_r)
    s = np.clip(s, 0.0, 1.0)
    return soil.k_s * np.sqrt(s) * (1.0 - (1.0 - s ** (1.0 / m)) ** m) ** 2


def van_genuchten(psi, soil: VanGenuchtenSoil | None = None):
    """Water content and hydraulic conductivity ``(theta, K)`` at pressure head ``psi``."""
    soil = soil or VanGenuchtenSoil()
    theta = water_content(psi, soil)
    return theta, conductivity_from_theta(theta, soil)


@dataclass(frozen=True)
class RichardsData:
    ramp_time: float = 1.0 / 16.0
    trench_start: float = -2.0
    trench_final: float = 0.2
    time_unit: str = "day"


class RichardsProblem(ProblemOps):
    """``stiffness``/``rhs`` carry only the diffusive part; ``apply_f`` adds gravity."""

    is_linear = False
    linearization = Linearization.L_SCHEME

    def __init__(self, grid: StructuredGrid, soil: VanGenuchtenSoil, data: RichardsData):
        self.grid = grid
        self.soil = soil
        self.data = data
        self.l_constant = soil.lipschitz
        self.fe = Q1Assembler(grid)
        self.n = grid.n_vertices
        x, z = grid.vertex_coords()
        self.x, self.z = x, z
        eps = 1e-12 * max(grid.lx, grid.ly)
        top = np.abs(z - (grid.y0 + grid.ly)) < eps
        right = np.abs(x - (grid.x0 + grid.lx)) < eps
        self.trench = np.flatnonzero(top & (x <= grid.x0 + 1.0 + eps))
        self.water_table = np.flatnonzero(right & (z <= grid.y0 + 1.0 + eps))
        self.dirichlet_dofs = np.concatenate((self.trench, self.water_table))
        self._isd = np.zeros(self.n, dtype=bool)
        self._isd[self.dirichlet_dofs] = True
        ml = self.fe.lumped_mass.copy()
        ml[self._isd] = 0.0
        self.lumped_mass = ml
        self._mass = CsrMatrix.diag(ml)

    def initial_value(self) -> np.ndarray:
        return 1.0 - self.z

    def boundary_values(self, t: float) -> np.ndarray:
        d = self.data
        g_trench = (d.trench_start + (d.trench_final - d.trench_start) * t / d.ramp_time
                    if t <= d.ramp_time else d.trench_final)
        return np.concatenate((np.full(self.trench.size, g_trench),
                               1.0 - self.z[self.water_table]))

    def theta(self, psi):
        return water_content(psi, self.soil)

    def mass(self):
        return self._mass

    def apply_mass(self, y):
        return self.lumped_mass * self.theta(y)

    def apply_mass_block(self, y):
        return self.lumped_mass[:, None] * self.theta(y)

    def _conductivity_q(self, psi):
        pq, gx, gz = self.fe.at_quadrature(np.asarray(psi, dtype=float))
        _, kq = van_genuchten(pq, self.soil)
        return kq, gx, gz

    def stiffness(self, y, t=0.0):
        """``A(psi)`` with identity rows on Dirichlet nodes."""
        kq, _, _ = self._conductivity_q(y)
        a = self.fe.weighted_stiffness(kq)
        return _pin_rows(a, self._isd)

    def rhs(self, t):
        b = np.zeros(self.n)
        b[self.dirichlet_dofs] = self.boundary_values(t)
        return b

    def apply_f(self, t, y):
        """``A(psi) psi + int K e_z . grad phi``; Dirichlet rows ``psi - g(t)``."""
        y = np.asarray(y, dtype=float)
        fe = self.fe
        kq, gx, gz = self._conductivity_q(y)
        out = fe.vector(fe.weight * ((kq * gx) @ fe.dx + (kq * (gz + 1.0)) @ fe.dy))
        out[self.dirichlet_dofs] = y[self.dirichlet_dofs] - self.boundary_values(t)
        return out

    def jacobian(self, t, y):
        return self.stiffness(y, t)

    def jacobian_mass(self, y):
        return self._mass.scaled(self.l_constant)


def _pin_rows(a: CsrMatrix, isd: np.ndarray) -> CsrMatrix:
    rows = a.row_indices()
    v = a.values.copy()
    pinned = isd[rows]
    v[pinned] = np.where(a.col_indices[pinned] == rows[pinned], 1.0, 0.0)
    return a.with_values(v)


def assemble_richards(grid: StructuredGrid, soil: VanGenuchtenSoil | None = None,
                      data: RichardsData | None = None) -> RichardsProblem:
    if abs(grid.lx * 3.0 - grid.ly * 2.0) > 1e-12 * grid.ly:
        raise ValueError("Richards grid must have the 2:3 aspect of (0,2)x(0,3)")
    return RichardsProblem(grid, soil or VanGenuchtenSoil(), data or RichardsData())


def richards_grid(nx: int, nz: int) -> StructuredGrid:
    return StructuredGrid(nx, nz, 2.0, 3.0)
