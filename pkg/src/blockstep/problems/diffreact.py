"""Nonlinear diffusion-reaction with homogeneous Neumann data, bilinear finite elements.

Weak form of ``u_t - div((1-u) u grad u) + beta (1-u) u = f``::

    f_a(t, u) = int D(u) grad u . grad phi_a + beta (1-u) u phi_a - src(t) phi_a

with ``D(u) = (1-u) u``.  The Jacobian is assembled analytically.

The reaction and the negative source drive ``u`` below zero inside the
moving circle after some time; there ``(1-u) u < 0`` would turn the problem
into backward diffusion.  By default ``D`` is therefore cut off at zero,
which leaves the model unchanged while ``0 <= u <= 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Linearization, ProblemOps
from .grid import Q1Assembler, StructuredGrid


@dataclass(frozen=True)
class DiffReactData:
    beta: float = 1.0
    radius: float = 0.1
    amplitude: float = -0.1
    u0: float = 0.5
    clip_diffusion: bool = True

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("source radius must be positive")

    def center(self, t: float) -> tuple[float, float]:
        return 0.5 + 0.25 * np.cos(6.0 * t), 0.5

    def source(self, t: float, x, y):
        cx, cy = self.center(t)
        inside = (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2
        return np.where(inside, self.amplitude, 0.0)

    def diffusion(self, u):
        """``D(u)`` and ``D'(u)``."""
        d = (1.0 - u) * u
        dd = 1.0 - 2.0 * u
        if self.clip_diffusion:
            neg = d < 0.0
            d = np.where(neg, 0.0, d)
            dd = np.where(neg, 0.0, dd)
        return d, dd


class DiffReactProblem(ProblemOps):
    is_linear = False
    linearization = Linearization.NEWTON

    def __init__(self, grid: StructuredGrid, data: DiffReactData):
        self.grid = grid
        self.data = data
        self.fe = Q1Assembler(grid)
        self.n = grid.n_vertices
        self.dirichlet_dofs = np.zeros(0, dtype=np.int64)

    def initial_value(self) -> np.ndarray:
        return np.full(self.n, self.data.u0)

    def mass(self):
        return self.fe.mass

    def rhs(self, t):
        return self.fe.load(self.data.source(t, self.fe.qx, self.fe.qy))

    def stiffness(self, y, t=0.0):
        """``K[u]`` with ``K[u] u - rhs(t) = f(t, u)``."""
        uq, _, _ = self.fe.at_quadrature(np.asarray(y))
        fe = self.fe
        d, _ = self.data.diffusion(uq)
        local = fe.weight * (np.einsum("eq,qab->eab", d, fe.stiffness_kernel)
                             + np.einsum("eq,qab->eab", self.data.beta * (1.0 - uq),
                                         fe.mass_kernel))
        return fe.matrix(local)

    def apply_f(self, t, y):
        fe = self.fe
        uq, gx, gy = fe.at_quadrature(np.asarray(y))
        d, _ = self.data.diffusion(uq)
        r = self.data.beta * (1.0 - uq) * uq - self.data.source(t, fe.qx, fe.qy)
        local = fe.weight * ((d * gx) @ fe.dx + (d * gy) @ fe.dy + r @ fe.phi)
        return fe.vector(local)

    def jacobian(self, t, y):
        fe = self.fe
        uq, gx, gy = fe.at_quadrature(np.asarray(y))
        d, dd_diff = self.data.diffusion(uq)
        dd = 1.0 - 2.0 * uq
        # dD/du phi_b (grad u . grad phi_a)
        h = gx[:, :, None] * fe.dx[None] + gy[:, :, None] * fe.dy[None]
        local = (np.einsum("eq,qab->eab", d, fe.stiffness_kernel)
                 + np.einsum("eq,eqa,qb->eab", dd_diff, h, fe.phi)
                 + np.einsum("eq,qab->eab", self.data.beta * dd, fe.mass_kernel))
        return fe.matrix(fe.weight * local)


def assemble_diffreact(grid: StructuredGrid, data: DiffReactData | None = None) -> DiffReactProblem:
    return DiffReactProblem(grid, data or DiffReactData())
