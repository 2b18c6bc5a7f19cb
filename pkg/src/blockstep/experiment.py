"""Experiment configuration, orchestration and CSV output."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .dirk import EngineSettings, OuterConvergenceError, RunResult, fixed_point_run, pipelined_run
from .krylov import ConvergenceMode, SolveSettings
from .problems.convdiff import assemble_convdiff
from .problems.diffreact import assemble_diffreact
from .problems.grid import StructuredGrid
from .problems.manufactured import ManufacturedProblem
from .problems.richards import assemble_richards, richards_grid
from .stats import SolverStats, write_per_step_csv, write_summary_csv
from .tableau import UnsupportedConfiguration, tableau_from_name

log = logging.getLogger(__name__)

PROBLEMS = ("convdiff", "diffreact", "richards", "manufactured")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class ExperimentFailed(RuntimeError):
    """The solver did not converge; ``stats`` holds the counts up to the failure."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


@dataclass
class ExperimentConfig:
    problem: str = "convdiff"
    nx: int = 64
    ny: int = 64
    tableau: str = "crank_nicolson"
    tau: float = 0.12
    n_steps: int = 40
    window: int = 1
    scheme: str = "pipelined"
    # unset: 1e-8 for single-step windows, 1e-2 when several steps share a window
    inner_reduction: float | None = None
    inner_max_iters: int = 1000
    outer_tolerance: float = 1e-8
    outer_rel_tolerance: float = 0.0
    outer_criterion: str = "residual"
    max_outer: int = 50
    preconditioner: str = "ilu0"
    solver: str = "bicgstab"
    out: str = "results"
    name: str = ""
    seed: int = 0
    vtk: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx and ny must be >= 1")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.n_steps < 1 or self.tau <= 0.0:
            raise ConfigError("n_steps must be >= 1 and tau > 0")
        for key in ("inner_reduction", "outer_tolerance"):
            value = getattr(self, key)
            if value is not None and not 0.0 < value < 1.0:
                raise ConfigError(f"{key} must lie in (0, 1)")
        if not 0.0 <= self.outer_rel_tolerance < 1.0:
            raise ConfigError("outer_rel_tolerance must lie in [0, 1)")
        if self.scheme not in ("pipelined", "fixed_point"):
            raise ConfigError("scheme must be 'pipelined' or 'fixed_point'")
        try:
            tab = tableau_from_name(self.tableau)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not tab.stiffly_accurate:
            raise ConfigError(f"tableau {self.tableau!r} is not stiffly accurate")
        try:
            self.engine_settings()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def label(self) -> str:
        return self.name or self.problem

    @property
    def effective_inner_reduction(self) -> float:
        if self.inner_reduction is not None:
            return self.inner_reduction
        return 1e-8 if self.window == 1 else 1e-2

    def engine_settings(self) -> EngineSettings:
        return EngineSettings(
            outer_tolerance=self.outer_tolerance,
            outer_rel_tolerance=self.outer_rel_tolerance,
            outer_criterion=self.outer_criterion,
            max_outer=self.max_outer,
            inner=SolveSettings(self.effective_inner_reduction, self.inner_max_iters,
                                ConvergenceMode.ALL_COLUMNS),
            solver=self.solver,
            preconditioner=self.preconditioner,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, text: str, ftype):
    text = text.strip()
    try:
        if ftype in ("int", int):
            return int(text)
        if ftype in ("float", float, "float | None"):
            return float(Fraction(text))
        if ftype in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) plus overrides."""
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, val, types[key])
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, val, types[key]) if isinstance(val, str) else val
    return ExperimentConfig(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides)


def preset_path(name: str) -> Path:
    """Path of a bundled preset, e.g. ``"convdiff_desk"``."""
    p = Path(__file__).parent / "presets" / f"{name}.cfg"
    if not p.exists():
        raise ConfigError(f"no preset named {name!r}")
    return p


def build_problem(cfg: ExperimentConfig):
    """Problem operators and initial value for a configuration."""
    if cfg.problem == "convdiff":
        p = assemble_convdiff(StructuredGrid(cfg.nx, cfg.ny))
        return p, np.zeros(p.n)
    if cfg.problem == "diffreact":
        p = assemble_diffreact(StructuredGrid(cfg.nx, cfg.ny))
        return p, p.initial_value()
    if cfg.problem == "richards":
        p = assemble_richards(richards_grid(cfg.nx, cfg.ny))
        return p, p.initial_value()
    p = ManufacturedProblem(cfg.nx)
    return p, p.initial_value()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: object
    run: RunResult
    outer_trace: list = field(default_factory=list)
    inner_iterations: int = 0

    @property
    def stats(self) -> SolverStats:
        return self.run.stats


def execute(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run one configuration; writes the per-step CSV (and VTK files if enabled)."""
    tab = tableau_from_name(cfg.tableau)
    problem, y0 = build_problem(cfg)
    width = cfg.window * tab.eliminated().m
    out = Path(cfg.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    trace, inner = [], [0]

    def callback(kind, info):
        if kind == "inner":
            inner[0] += info.iterations
        else:
            trace.append(info)

    on_step = None
    if cfg.vtk and write and hasattr(problem, "grid"):
        from .vtk import write_snapshot

        def on_step(n, t, y):
            write_snapshot(out / f"{cfg.label}_s{cfg.window}_{n:04d}.vtk", problem, y, t)

    settings = cfg.engine_settings()
    try:
        if cfg.scheme == "fixed_point":
            run = fixed_point_run(problem, tab, cfg.tau, cfg.n_steps, cfg.window, y0, settings,
                                  callback=callback)
        else:
            run = pipelined_run(problem, tab, cfg.tau, cfg.n_steps, width, y0, settings,
                                callback=callback, on_step=on_step)
    except (OuterConvergenceError, UnsupportedConfiguration) as exc:
        stats = getattr(exc, "stats", None)
        if write and stats is not None:
            write_per_step_csv(out / f"{cfg.label}step{cfg.window}.csv", stats)
        raise ExperimentFailed(str(exc), stats) from exc
    run.stats.s = cfg.window
    if write:
        write_per_step_csv(out / f"{cfg.label}step{cfg.window}.csv", run.stats)
    return ExperimentResult(cfg, problem, run, trace, inner[0])


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> SolverStats:
    """Run one configuration and write its summary and per-step CSV files."""
    try:
        res = execute(cfg, write)
    except ExperimentFailed as exc:
        if write and exc.stats is not None:
            write_summary_csv(Path(cfg.out) / f"{cfg.label}results.csv", [exc.stats])
        raise
    if write:
        write_summary_csv(Path(cfg.out) / f"{cfg.label}results.csv", [res.stats])
    return res.stats


def sweep(cfg: ExperimentConfig, s_values, write: bool = True, failures: list | None = None):
    """One run per window size ``s``; failures are recorded and the sweep continues."""
    s_values = list(s_values)
    if not s_values:
        raise ConfigError("sweep needs at least one value of s")
    results = []
    for s in s_values:
        c = cfg.replace(window=int(s))
        try:
            results.append(execute(c, write).stats)
        except ExperimentFailed as exc:
            log.error("s=%d failed: %s", s, exc)
            if failures is not None:
                failures.append((s, exc))
            if exc.stats is not None:
                exc.stats.s = int(s)
                results.append(exc.stats)
    if write:
        write_summary_csv(Path(cfg.out) / f"{cfg.label}results.csv", results)
    return sorted(results, key=lambda st: st.s)
