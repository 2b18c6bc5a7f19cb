"""Vectorized DIRK time stepping.

A window of consecutive implicit stages ``Y = (y_g0, ..., y_g0+w-1)`` is
coupled through the small matrices ``A1, A2`` (see :mod:`blockstep.tableau`).
The residual of the window is

    R(Y) = mass(Y) A1^T + F(T, Y) A2^T - B0,

with ``F`` the column-wise ``f(t, y) = K[y] y - b(t)`` and ``B0`` collecting
the couplings to stages already accepted before ``g0``:

    B0_c = -sum_{j < g0} (A1[g, j] mass(y_j) + A2[g, j] f(t_j, y_j)).

With this sign convention the exact stage values have zero residual.  The
left-hand side used for every column is the first column's operator
``J = mass'/tau + beta * f'``; moving the remaining couplings to the
right-hand side gives the split fixed-point iteration

    J Y^j = J Y^{j-1} - R(Y^{j-1}),

which for linear problems equals ``-M Y (A1 - I/tau)^T - K Y (A2 - beta I)^T
+ B A2^T + B0``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .krylov import SOLVERS, SolveSettings, make_preconditioner
from .problems.base import ProblemOps
from .sparse import BlockVector, CsrMatrix, ShapeError, linear_combination, spbop_array
from .stats import SolverStats
from .tableau import (ButcherTableau, StageChain, TimeSteppingMatrices,
                      UnsupportedConfiguration, iota, window_matrices)

log = logging.getLogger(__name__)


class OuterConvergenceError(RuntimeError):
    """Outer (Newton / L-scheme / fixed-point) iteration did not converge."""

    def __init__(self, message, stage=None, residuals=None, stats=None):
        super().__init__(message)
        self.stage = stage
        self.residuals = list(residuals or [])
        self.stats = stats


@dataclass
class EngineSettings:
    outer_tolerance: float = 1e-8
    outer_rel_tolerance: float = 0.0
    max_outer: int = 50
    inner: SolveSettings = field(default_factory=lambda: SolveSettings(1e-8, 1000))
    solver: str = "bicgstab"
    preconditioner: str = "ilu0"
    ssor_omega: float = 1.0
    # "residual": Euclidean norm of the front residual column against
    # abs + rel * (its first value); "increment": max-norm of the front update
    # against abs + rel * max-norm of the updated front column; "error": the
    # increment scaled by q/(1-q), q the observed contraction rate
    outer_criterion: str = "residual"
    # trailing columns whose residual grows beyond this factor are re-seeded
    column_reset_factor: float = 10.0

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.outer_criterion not in ("residual", "increment", "error"):
            raise ValueError(f"unknown outer criterion {self.outer_criterion!r}")
        if self.outer_tolerance <= 0.0 or self.outer_rel_tolerance < 0.0:
            raise ValueError("outer tolerances must be positive")


# ---------------------------------------------------------------------------
# pipeline state

@dataclass
class PipelineState:
    """Window of in-flight stages; column 0 is the oldest unconverged stage.

    ``n`` is the step and ``k`` the 1-based stage of column 0, ``first`` its
    global stage index.  ``history`` maps global stage indices to accepted
    stage values (``-1`` is the initial value).
    """

    n: int
    k: int
    Y: BlockVector
    history: dict
    m: int
    first: int = 0

    @property
    def width(self) -> int:
        return self.Y.width


def initial_state(y0, window: int, m: int) -> PipelineState:
    y0 = np.asarray(y0, dtype=float)
    Y = BlockVector(np.repeat(y0[:, None], window, axis=1))
    return PipelineState(0, 1, Y, {-1: y0.copy()}, m, 0)


def shift(state: PipelineState) -> PipelineState:
    """Accept column 0, move the window left, duplicate the last column."""
    Y = state.Y.array
    history = {g: y for g, y in state.history.items() if g >= state.first - state.m - 1}
    history[state.first] = Y[:, 0].copy()
    if Y.shape[1] > 1:
        Y = np.concatenate((Y[:, 1:], Y[:, -1:]), axis=1)
    else:
        Y = Y.copy()
    n, k = iota(state.n, state.k + 1, state.m)
    return PipelineState(n, k, BlockVector(Y), history, state.m, state.first + 1)


# ---------------------------------------------------------------------------
# window algebra

def stage_times(chain: StageChain, first: int, width: int) -> np.ndarray:
    return np.array([chain.time(first + c) for c in range(width)])


def assemble_b0(state: PipelineState, problem: ProblemOps, chain: StageChain,
                width: int | None = None) -> BlockVector:
    """Couplings of the window rows to stages accepted before the window."""
    width = state.width if width is None else width
    cache = {}
    out = np.zeros((problem.n, width))
    for c in range(width):
        for j, a1, a2 in chain.couplings(state.first + c):
            if j >= state.first:
                continue
            if j not in state.history:
                raise KeyError(f"stage {j} missing from history")
            if j not in cache:
                yj = state.history[j]
                cache[j] = (problem.apply_mass(yj), problem.apply_f(chain.time(j), yj))
            mj, fj = cache[j]
            if a1:
                out[:, c] -= a1 * mj
            if a2:
                out[:, c] -= a2 * fj
    return BlockVector(out)


def pipeline_residual(Y: BlockVector, b0: BlockVector, problem: ProblemOps,
                      tsm: TimeSteppingMatrices, times) -> BlockVector:
    """``mass(Y) A1^T + F(T, Y) A2^T - B0``; column ``c`` is stage ``c``'s residual."""
    y = Y.array
    if b0.array.shape != y.shape or tsm.window != y.shape[1]:
        raise ShapeError("window, B0 and coupling matrices disagree in shape")
    r = problem.apply_mass_block(y) @ tsm.A1.array.T
    r += problem.apply_f_block(times, y) @ tsm.A2.array.T
    r -= b0.array
    return BlockVector(r)


def split_residual_rhs(Y: BlockVector, M: CsrMatrix, K: CsrMatrix, B: BlockVector,
                       B0: BlockVector, tsm: TimeSteppingMatrices) -> BlockVector:
    """Right-hand side of ``(M/tau + beta K) Y = -M Y (A1 - I/tau)^T - K Y (A2 - beta I)^T + B A2^T + B0``."""
    y = Y.array
    w = tsm.window
    if y.shape[1] != w or B.width != w or B0.width != w:
        raise ShapeError("window width mismatch")
    a1_off = tsm.A1.array - np.eye(w) / tsm.tau
    a2_off = tsm.A2.array - tsm.beta * np.eye(w)
    rhs = -(spbop_array(M, y) @ a1_off.T) - spbop_array(K, y) @ a2_off.T
    rhs += B.array @ tsm.A2.array.T + B0.array
    return BlockVector(rhs)


# ---------------------------------------------------------------------------
# linear solves with the first-column operator

class _LinearSolve:
    """Assembles ``J``, eliminates Dirichlet couplings, caches the preconditioner."""

    def __init__(self, problem: ProblemOps, settings: EngineSettings, stats: SolverStats,
                 callback=None):
        self.problem = problem
        self.settings = settings
        self.stats = stats
        self.callback = callback
        self._cache_key = None
        self._system = None
        isd = np.zeros(problem.n, dtype=bool)
        isd[np.asarray(problem.dirichlet_dofs, dtype=np.int64)] = True
        self._isd = isd

    def operator(self, tau: float, beta: float, t: float, y0) -> CsrMatrix:
        jm = self.problem.jacobian_mass(y0)
        jf = self.problem.jacobian(t, y0)
        return linear_combination(1.0 / tau, jm, beta, jf)

    def prepare(self, tau, beta, t, y0):
        key = (tau, beta)
        if self.problem.is_linear and key == self._cache_key:
            return
        j = self.operator(tau, beta, t, y0)
        jel, coupling = _eliminate(j, self._isd)
        t0 = time.perf_counter()
        precond = make_preconditioner(self.settings.preconditioner, jel, self.settings.ssor_omega)
        self.stats.prec_setup_time += time.perf_counter() - t0
        self._system = (j, jel, coupling, precond)
        self._cache_key = key

    def solve(self, rhs: np.ndarray, x0: np.ndarray | None = None):
        j, jel, coupling, precond = self._system
        rhs = rhs.copy()
        if coupling is not None:
            d = np.flatnonzero(self._isd)
            xd = rhs[d] / j.diagonal()[d][:, None]
            rhs -= spbop_array(coupling, np.ascontiguousarray(xd))
        x0b = None if x0 is None else BlockVector(x0)
        x, rep = SOLVERS[self.settings.solver](jel, BlockVector(rhs), x0b, precond,
                                               self.settings.inner)
        self.stats.ls_time += rep.solve_time
        if self.callback is not None:
            self.callback("inner", rep)
        if not rep.converged:
            log.warning("inner %s solve stopped after %d iterations (%s)",
                        self.settings.solver, rep.iterations, rep.breakdown or "max_iters")
        return x.array, rep


def _eliminate(j: CsrMatrix, isd: np.ndarray):
    """Zero Dirichlet rows/columns except the diagonal; return the moved column block."""
    if not isd.any():
        return j, None
    rows = j.row_indices()
    cols = j.col_indices
    diag = rows == cols
    drow = isd[rows]
    dcol = isd[cols]
    keep = diag | ~(drow | dcol)
    jel = CsrMatrix.from_triplets(j.n_rows, j.n_cols, rows[keep], cols[keep], j.values[keep])
    move = dcol & ~drow
    d = np.flatnonzero(isd)
    pos = np.full(j.n_cols, -1)
    pos[d] = np.arange(d.size)
    coupling = CsrMatrix.from_triplets(j.n_rows, d.size, rows[move], pos[cols[move]],
                                       j.values[move])
    return jel, coupling


# ---------------------------------------------------------------------------
# drivers

@dataclass
class RunResult:
    times: np.ndarray
    states: list
    stats: SolverStats

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _check_tableau(tab: ButcherTableau, window: int):
    if not tab.stiffly_accurate:
        raise UnsupportedConfiguration("the integrator requires a stiffly accurate tableau")
    if tab.explicit_first_stage and abs(tab.c[-1] - 1.0) > 1e-14:
        # the explicit stage reuses the previous step's last stage as y(t_n)
        raise UnsupportedConfiguration("explicit first stage needs c_m = 1")
    if window < 1:
        raise ValueError("window must be >= 1")


def linear_fixed_point_solve(problem: ProblemOps, tab: ButcherTableau, tau: float, s: int,
                             y_n, settings: EngineSettings | None = None, t_n: float = 0.0,
                             stats: SolverStats | None = None, callback=None):
    """Advance a linear problem by ``s`` steps with the split fixed-point iteration.

    Every outer iteration solves ``(M/tau + beta K) Y^j = split_residual_rhs(Y^{j-1})``
    for all ``s*m'`` stages at once, starting the inner solver from ``Y^{j-1}``.
    Iterates until every column of the all-at-once residual is below the outer
    tolerance.  Returns ``(states y^{n+1..n+s}, stats)``.
    """
    if not problem.is_linear:
        raise UnsupportedConfiguration("fixed-point solve needs a linear problem")
    settings = settings or EngineSettings()
    _check_tableau(tab, s)
    chain = StageChain(tab, tau, t_n)
    stats = stats if stats is not None else SolverStats(s)
    w = s * chain.m
    tsm = window_matrices(chain, 0, w)
    times = stage_times(chain, 0, w)
    state = initial_state(y_n, w, chain.m)
    b0 = assemble_b0(state, problem, chain)
    M = problem.mass()
    K = problem.stiffness(None, t_n)
    B = BlockVector(np.column_stack([problem.rhs(t) for t in times]))
    linsolve = _LinearSolve(problem, settings, stats, callback)
    linsolve.prepare(tau, tsm.beta, times[0], state.Y.array[:, 0])
    Y = state.Y
    step = stats.step(0) if not stats.per_step else stats.per_step[-1]
    history = []
    for it in range(settings.max_outer + 1):
        r = pipeline_residual(Y, b0, problem, tsm, times).array
        rn = np.sqrt(np.einsum("ij,ij->j", r, r))
        history.append(rn)
        if rn.max() < settings.outer_tolerance:
            break
        if it == settings.max_outer:
            raise OuterConvergenceError(
                f"fixed-point iteration not converged after {it} iterations",
                stage=(0, 1), residuals=history, stats=stats)
        rhs = split_residual_rhs(Y, M, K, B, b0, tsm)
        x, rep = linsolve.solve(rhs.array, Y.array)
        Y = BlockVector(x)
        step.nl_iterations += 1
        step.ls_iterations += rep.iterations
        if callback is not None:
            callback("outer", (0, it, rn))
    states = [Y.array[:, (i + 1) * chain.m - 1].copy() for i in range(s)]
    return states, stats


def fixed_point_run(problem: ProblemOps, tab: ButcherTableau, tau: float, n_steps: int,
                    s: int, y0, settings: EngineSettings | None = None, t0: float = 0.0,
                    callback=None) -> RunResult:
    """Consecutive non-overlapping windows of ``s`` steps; iterations are booked on
    the first step of each window."""
    settings = settings or EngineSettings()
    stats = SolverStats(s)
    y = np.asarray(y0, dtype=float)
    states = [y.copy()]
    n = 0
    while n < n_steps:
        w = min(s, n_steps - n)
        stats.step(n)
        new, _ = linear_fixed_point_solve(problem, tab, tau, w, y, settings,
                                          t0 + n * tau, stats, callback)
        for k in range(1, w):
            stats.step(n + k)
        states.extend(new)
        y = new[-1]
        n += w
    times = t0 + tau * np.arange(n_steps + 1)
    return RunResult(times, states, stats)


def pipelined_run(problem: ProblemOps, tab: ButcherTableau, tau: float, n_steps: int,
                  window: int, y0, settings: EngineSettings | None = None,
                  t0: float = 0.0, callback=None, keep_states: bool = True,
                  on_step=None) -> RunResult:
    """Block Krylov time stepping with pipelining.

    The window holds ``window`` consecutive implicit stages.  For the stage in
    column 0: evaluate the window residual, stop when its first column is
    below tolerance, otherwise solve ``J V = R`` with
    ``J = mass'(y_0)/tau + a_kk f'(t_0, y_0)`` for all columns at once and set
    ``Y <- Y - V``.  An accepted stage leaves the window and the last column
    is duplicated as the guess for the stage entering it.  Near the end of
    the run the window shrinks.
    """
    settings = settings or EngineSettings()
    _check_tableau(tab, window)
    chain = StageChain(tab, tau, t0)
    m = chain.m
    total = n_steps * m
    stats = SolverStats(max(1, window // m))
    for n in range(n_steps):
        stats.step(n)
    state = initial_state(y0, min(window, total), m)
    linsolve = _LinearSolve(problem, settings, stats, callback)
    states = [np.asarray(y0, dtype=float).copy()]
    by_residual = settings.outer_criterion == "residual"
    rate = None  # contraction estimate, carried over between stages
    while state.first < total:
        w = min(state.width, total - state.first)
        if w < state.width:
            state.Y = BlockVector(state.Y.array[:, :w])
        tsm = window_matrices(chain, state.first, w)
        times = stage_times(chain, state.first, w)
        b0 = assemble_b0(state, problem, chain)
        step = stats.step(state.n)
        residuals = []
        ref = None
        Y = state.Y
        it = 0
        if not problem.is_linear:
            Y = _better_front_guess(Y, state, b0, problem, chain, times)
        entry = None
        prev_inc = None
        stage_rate = 0.0
        while True:
            r = pipeline_residual(Y, b0, problem, tsm, times).array
            norms = np.linalg.norm(r, axis=0)
            if entry is None:
                entry = norms
            bad = ~np.isfinite(norms) | (norms > settings.column_reset_factor * entry)
            if bad[0]:
                # diverging front column: restart the window from the last accepted stage
                last = state.history[state.first - 1]
                Y = BlockVector(np.repeat(last[:, None], w, axis=1))
                log.debug("restarted window at stage %d", state.first)
                r = pipeline_residual(Y, b0, problem, tsm, times).array
                entry = np.maximum(entry, np.linalg.norm(r, axis=0))
            elif bad.any():
                Y = _reseed(Y, bad)
                log.debug("re-seeded columns %s of window at stage %d",
                          np.flatnonzero(bad).tolist(), state.first)
                r = pipeline_residual(Y, b0, problem, tsm, times).array
                entry = np.where(bad, np.linalg.norm(r, axis=0), entry)
            r0 = float(np.linalg.norm(r[:, 0]))
            residuals.append(r0)
            if ref is None:
                ref = r0
            if by_residual and r0 < settings.outer_tolerance + settings.outer_rel_tolerance * ref:
                break
            if it == settings.max_outer:
                raise OuterConvergenceError(
                    f"stage ({state.n}, {state.k}) not converged after {it} outer iterations; "
                    f"residuals {residuals[-3:]}", stage=(state.n, state.k),
                    residuals=residuals, stats=stats)
            linsolve.prepare(tau, tsm.beta, times[0], Y.array[:, 0])
            v, rep = linsolve.solve(r)
            Y = BlockVector(Y.array - v)
            it += 1
            step.nl_iterations += 1
            step.ls_iterations += rep.iterations
            if callback is not None:
                callback("outer", (state.first, it, r0))
            if not by_residual:
                inc = float(np.max(np.abs(v[:, 0])))
                scale = (settings.outer_tolerance
                         + settings.outer_rel_tolerance * float(np.max(np.abs(Y.array[:, 0]))))
                if settings.outer_criterion == "increment":
                    if inc <= scale:
                        break
                else:
                    if prev_inc is not None and prev_inc > 0.0 and inc < prev_inc:
                        stage_rate = max(stage_rate, inc / prev_inc)
                    prev_inc = inc
                    q = max(stage_rate, rate or 0.0)
                    if (rate is not None or stage_rate > 0.0) and q / (1.0 - q) * inc <= scale:
                        break
        if stage_rate > 0.0:
            rate = max(rate or 0.0, stage_rate)
        state.Y = Y
        if chain.stage_of(state.first) == m - 1:
            y_new = Y.array[:, 0].copy()
            if keep_states or len(states) == 1:
                states.append(y_new)
            else:
                states[-1] = y_new
            if on_step is not None:
                on_step(state.n + 1, chain.time(state.first), y_new)
        state = shift(state)
    times = t0 + tau * np.arange(n_steps + 1)
    if not keep_states:
        times = times[[0, -1]]
    return RunResult(times, states, stats)


def _better_front_guess(Y, state, b0, problem, chain, times):
    """Use the last accepted stage as front guess when its residual is smaller."""
    last = state.history.get(state.first - 1)
    if last is None:
        return Y
    tsm1 = window_matrices(chain, state.first, 1)
    b01 = BlockVector(np.ascontiguousarray(b0.array[:, :1]))

    def res(y):
        return np.linalg.norm(pipeline_residual(BlockVector(y[:, None].copy()), b01, problem,
                                                tsm1, times[:1]).array)

    r_cur, r_last = res(Y.array[:, 0]), res(last)
    if r_last < r_cur:
        a = Y.array.copy()
        a[:, 0] = last
        return BlockVector(a)
    return Y


def _reseed(Y: BlockVector, bad: np.ndarray) -> BlockVector:
    """Replace flagged columns by their left neighbour (processed left to right)."""
    a = Y.array.copy()
    for c in np.flatnonzero(bad):
        a[:, c] = a[:, c - 1]
    return BlockVector(a)


def pipelined_nonlinear_run(problem, tab, tau, n_steps, window, y0, settings=None, **kw):
    """Alias of :func:`pipelined_run` returning ``(trajectory, stats)``."""
    res = pipelined_run(problem, tab, tau, n_steps, window, y0, settings, **kw)
    return np.array(res.states), res.stats
