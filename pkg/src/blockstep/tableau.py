"""Butcher tableaus and the stage-coupling matrices of the all-at-once system.

Stages of consecutive time steps are numbered globally: after removing an
explicit first stage every step owns ``m'`` implicit stages, and stage
``i`` (0-based) of step ``n`` has global index ``n*m' + i``.  Global index
``-1`` denotes the initial value, i.e. the last stage of a virtual step
``-1``.  The infinite coupling matrices are

* ``A1``: ``1/tau`` on the diagonal and ``-1/tau`` from every stage of step
  ``n`` to the last stage of step ``n-1`` (which *is* ``y^n`` for stiffly
  accurate methods);
* ``A2``: the implicit Butcher block on the diagonal blocks plus the
  eliminated explicit-stage weights ``a_{i,1}`` at the positions of the
  ``-1/tau`` entries of ``A1``.

A window is the square sub-block starting at some global stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sparse import SmallDense


class UnsupportedConfiguration(ValueError):
    """Tableau/window combination the vectorized integrator cannot handle."""


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "dirk"

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        c = np.asarray(self.c, dtype=float).ravel()
        m = a.shape[0]
        if a.shape != (m, m) or b.size != m or c.size != m:
            raise ValueError("tableau arrays have inconsistent sizes")
        if np.any(np.triu(a, 1) != 0.0):
            raise ValueError("DIRK tableau must be lower triangular")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def stiffly_accurate(self) -> bool:
        return bool(np.allclose(self.b, self.a[-1], rtol=0.0, atol=1e-15))

    @property
    def explicit_first_stage(self) -> bool:
        return self.m > 1 and self.a[0, 0] == 0.0 and self.c[0] == 0.0

    def eliminated(self) -> "ImplicitStages":
        """Implicit part of the tableau; an explicit first stage moves into ``a_prev``."""
        if self.explicit_first_stage:
            return ImplicitStages(self.a[1:, 1:].copy(), self.a[1:, 0].copy(),
                                  self.c[1:].copy(), self)
        return ImplicitStages(self.a.copy(), np.zeros(self.m), self.c.copy(), self)


@dataclass(frozen=True, eq=False)
class ImplicitStages:
    """``m'`` implicit stages plus the coupling weights to the previous step value."""

    a: np.ndarray
    a_prev: np.ndarray
    c: np.ndarray
    tableau: ButcherTableau

    @property
    def m(self) -> int:
        return self.a.shape[0]


def implicit_euler() -> ButcherTableau:
    return ButcherTableau([[1.0]], [1.0], [1.0], "implicit_euler")


def theta_method(theta: float) -> ButcherTableau:
    """Theta-method written as a two-stage tableau with explicit first stage."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    return ButcherTableau([[0.0, 0.0], [1.0 - theta, theta]], [1.0 - theta, theta],
                          [0.0, 1.0], f"theta({theta:g})")


def crank_nicolson() -> ButcherTableau:
    return theta_method(0.5)


def sdirk2() -> ButcherTableau:
    """Two-stage, second-order, L-stable SDIRK with ``gamma = 1 - sqrt(2)/2``."""
    g = 1.0 - math.sqrt(2.0) / 2.0
    return ButcherTableau([[g, 0.0], [1.0 - g, g]], [1.0 - g, g], [g, 1.0], "sdirk2")


def tableau_from_name(name: str) -> ButcherTableau:
    """``implicit_euler``, ``crank_nicolson``, ``sdirk2`` or ``theta(<value>)``."""
    name = name.strip().lower()
    if name == "implicit_euler":
        return implicit_euler()
    if name == "crank_nicolson":
        return crank_nicolson()
    if name == "sdirk2":
        return sdirk2()
    if name.startswith("theta"):
        inner = name[5:].strip("()= ")
        return theta_method(float(inner))
    raise ValueError(f"unknown tableau {name!r}")


class StageChain:
    """Global stage numbering and couplings for a tableau, step width and start time."""

    def __init__(self, tableau: ButcherTableau, tau: float, t0: float = 0.0):
        if tau <= 0.0:
            raise ValueError("time step width must be positive")
        self.tableau = tableau
        self.stages = tableau.eliminated()
        self.m = self.stages.m
        self.tau = float(tau)
        self.t0 = float(t0)

    def step_of(self, g: int) -> int:
        return g // self.m

    def stage_of(self, g: int) -> int:
        return g % self.m

    def time(self, g: int) -> float:
        if g == -1:
            return self.t0
        return self.t0 + (self.step_of(g) + self.stages.c[self.stage_of(g)]) * self.tau

    def couplings(self, g: int):
        """``[(j, a1, a2), ...]`` of all nonzero couplings of stage row ``g`` (``j <= g``)."""
        n, i = divmod(g, self.m)
        inv = 1.0 / self.tau
        prev = n * self.m - 1
        out = [(prev, -inv, float(self.stages.a_prev[i]))]
        for j in range(i + 1):
            a1 = inv if j == i else 0.0
            a2 = float(self.stages.a[i, j])
            if a1 != 0.0 or a2 != 0.0:
                out.append((n * self.m + j, a1, a2))
        return out

    def window(self, first: int, width: int):
        """Dense ``(A1, A2)`` blocks for global stages ``first .. first+width-1``."""
        a1 = np.zeros((width, width))
        a2 = np.zeros((width, width))
        for r in range(width):
            for j, c1, c2 in self.couplings(first + r):
                if j >= first:
                    a1[r, j - first] += c1
                    a2[r, j - first] += c2
        return a1, a2


@dataclass(frozen=True, eq=False)
class TimeSteppingMatrices:
    A1: SmallDense
    A2: SmallDense
    beta: float
    tau: float
    window: int
    first_stage: int = 0


def window_matrices(chain: StageChain, first: int, width: int) -> TimeSteppingMatrices:
    a1, a2 = chain.window(first, width)
    return TimeSteppingMatrices(SmallDense.from_array(a1), SmallDense.from_array(a2),
                                float(a2[0, 0]), chain.tau, width, first)


def build_window_matrices(tab: ButcherTableau, tau: float, s: int) -> TimeSteppingMatrices:
    """Coupling matrices for ``s`` consecutive steps (``s*m'`` implicit stages)."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if s > 1 and not tab.stiffly_accurate:
        raise UnsupportedConfiguration(
            "several time steps at once need a stiffly accurate tableau")
    chain = StageChain(tab, tau)
    tsm = window_matrices(chain, 0, s * chain.m)
    if tsm.beta <= 0.0:
        raise UnsupportedConfiguration("leading diagonal coefficient must be positive")
    return tsm


def iota(n: int, k: int, m: int) -> tuple[int, int]:
    """Map the ``k``-th stage counted from step ``n`` to ``(step, stage)``, stages 1-based."""
    if k < 1 or m < 1:
        raise ValueError("k and m must be >= 1")
    return n + (k - 1) // m, (k - 1) % m + 1
