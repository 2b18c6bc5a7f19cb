"""Small linear system with a known smooth solution, used for order checks."""

from __future__ import annotations

import numpy as np

from ..sparse import CsrMatrix, spmv
from .base import LinearProblem


class ManufacturedProblem(LinearProblem):
    """``M y' + K y = b(t)`` with ``b`` chosen so that ``y(t) = exact(t)``.

    ``K`` is a scaled 1D Laplacian plus a shift, ``M`` a tridiagonal mass.
    """

    def __init__(self, n: int = 12, stiffness_scale: float = 4.0):
        if n < 2:
            raise ValueError("need at least two unknowns")
        i = np.arange(n)
        k = CsrMatrix.from_triplets(
            n, n, np.concatenate((i, i[1:], i[:-1])), np.concatenate((i, i[:-1], i[1:])),
            np.concatenate((np.full(n, 2.0 * stiffness_scale + 1.0),
                            np.full(n - 1, -stiffness_scale), np.full(n - 1, -stiffness_scale))))
        m = CsrMatrix.from_triplets(
            n, n, np.concatenate((i, i[1:], i[:-1])), np.concatenate((i, i[:-1], i[1:])),
            np.concatenate((np.full(n, 4.0 / 6.0), np.full(n - 1, 1.0 / 6.0),
                            np.full(n - 1, 1.0 / 6.0))))
        super().__init__(m, k)
        x = (i + 1.0) / (n + 1.0)
        self._v1 = np.sin(np.pi * x)
        self._v2 = x * (1.0 - x)

    def exact(self, t: float) -> np.ndarray:
        return np.sin(2.0 * t) * self._v1 + np.exp(-t) * self._v2 + self._v2

    def exact_derivative(self, t: float) -> np.ndarray:
        return 2.0 * np.cos(2.0 * t) * self._v1 - np.exp(-t) * self._v2

    def rhs(self, t):
        return spmv(self._m, self.exact_derivative(t)) + spmv(self._k, self.exact(t))

    def initial_value(self) -> np.ndarray:
        return self.exact(0.0)
