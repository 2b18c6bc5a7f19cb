"""Iteration and timing counters in the layout of the result CSV files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

SUMMARY_HEADER = ("s", "nl_iterations", "ls_iterations", "ls_time", "prec_setup_time")
PER_STEP_HEADER = ("time_steps", "nl_iterations", "ls_iterations")


@dataclass
class StepStats:
    time_step: int
    nl_iterations: int = 0
    ls_iterations: int = 0


@dataclass
class SolverStats:
    s: int
    per_step: list[StepStats] = field(default_factory=list)
    ls_time: float = 0.0
    prec_setup_time: float = 0.0

    @property
    def nl_iterations(self) -> int:
        return sum(p.nl_iterations for p in self.per_step)

    @property
    def ls_iterations(self) -> int:
        return sum(p.ls_iterations for p in self.per_step)

    def step(self, n: int) -> StepStats:
        while len(self.per_step) <= n:
            self.per_step.append(StepStats(len(self.per_step) + 1))
        return self.per_step[n]

    def summary_row(self) -> tuple:
        return (self.s, self.nl_iterations, self.ls_iterations,
                f"{self.ls_time:.6g}", f"{self.prec_setup_time:.6g}")


def write_summary_csv(path, stats_list) -> None:
    rows = sorted(stats_list, key=lambda st: st.s)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for st in rows:
            w.writerow(st.summary_row())


def write_per_step_csv(path, stats: SolverStats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PER_STEP_HEADER)
        for p in stats.per_step:
            w.writerow((p.time_step, p.nl_iterations, p.ls_iterations))
