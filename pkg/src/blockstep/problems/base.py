"""Interface between spatial discretizations and the time integrator.

A problem is the semi-discrete system ``d/dt mass(y) + f(t, y) = 0`` with
``f(t, y) = K[y] y - b(t)``.  For most problems ``mass(y) = M y``; Richards'
equation uses ``M_lumped * theta(y)``.

Dirichlet degrees of freedom are expressed inside the same form: their mass
rows vanish and ``f_i(t, y) = y_i - g_i(t)``, so every implicit stage pins
them to the boundary data.
"""

from __future__ import annotations

import enum

import numpy as np

from ..sparse import BlockVector, CsrMatrix, spbop_array, spmv


class Linearization(str, enum.Enum):
    NEWTON = "newton"
    L_SCHEME = "l_scheme"


class ProblemOps:
    """Base class; subclasses provide ``mass``, ``stiffness``, ``rhs``."""

    n: int
    is_linear: bool = True
    linearization: Linearization = Linearization.NEWTON
    dirichlet_dofs: np.ndarray = np.zeros(0, dtype=np.int64)
    l_constant: float = 0.0

    def mass(self) -> CsrMatrix:
        raise NotImplementedError

    def stiffness(self, y, t: float) -> CsrMatrix:
        raise NotImplementedError

    def rhs(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def apply_mass(self, y) -> np.ndarray:
        return spmv(self.mass(), y)

    def apply_f(self, t: float, y) -> np.ndarray:
        return spmv(self.stiffness(y, t), y) - self.rhs(t)

    def jacobian(self, t: float, y) -> CsrMatrix:
        """Derivative of ``f`` (Newton) or the frozen-coefficient operator (L-scheme)."""
        return self.stiffness(y, t)

    def jacobian_mass(self, y) -> CsrMatrix:
        """Mass part of the linearization: ``M`` or ``L * M_lumped``."""
        return self.mass()

    # column-wise helpers used by the integrator
    def apply_mass_block(self, y: np.ndarray) -> np.ndarray:
        return np.column_stack([self.apply_mass(y[:, c]) for c in range(y.shape[1])])

    def apply_f_block(self, times, y: np.ndarray) -> np.ndarray:
        return np.column_stack([self.apply_f(t, y[:, c]) for c, t in enumerate(times)])


class LinearProblem(ProblemOps):
    """``M y' + K y = b(t)`` with constant ``M`` and ``K``."""

    def __init__(self, mass: CsrMatrix, stiffness: CsrMatrix, rhs=None):
        self._m = mass
        self._k = stiffness
        self.n = mass.n_rows
        self._rhs = rhs

    def mass(self):
        return self._m

    def stiffness(self, y=None, t=0.0):
        return self._k

    def rhs(self, t):
        if self._rhs is None:
            return np.zeros(self.n)
        return np.asarray(self._rhs(t), dtype=float)

    def apply_mass_block(self, y):
        return spbop_array(self._m, np.ascontiguousarray(y))

    def apply_f_block(self, times, y):
        out = spbop_array(self._k, np.ascontiguousarray(y))
        for c, t in enumerate(times):
            out[:, c] -= self.rhs(t)
        return out


def as_block(y) -> BlockVector:
    return y if isinstance(y, BlockVector) else BlockVector(y)
