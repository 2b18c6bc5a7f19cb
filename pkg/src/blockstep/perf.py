"""Arithmetic intensity, a simplified ECM runtime model and an spBOP microbenchmark.

Per stored nonzero an spBOP with ``k`` right-hand sides performs ``2k`` flops
and streams the matrix value plus ``k`` entries of the block vector, so

    AI(spBOP) = 2k / (8 (k + 1)) = k / (4 (k + 1))

which reduces to ``1/8`` for a single vector.  The runtime model takes the
slowest of computation, memory traffic and register/L1 traffic.
"""

from __future__ import annotations

import csv
import enum
import logging
import time
from dataclasses import dataclass

import numpy as np

from .sparse import CsrMatrix, spbop_array

log = logging.getLogger(__name__)

DOUBLE = 8


def ai_spmv() -> float:
    """Flops per byte of a CSR sparse matrix-vector product (value + vector entry)."""
    return 2.0 / (2 * DOUBLE)


def ai_spbop(k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return k / (4.0 * (k + 1))


@dataclass(frozen=True)
class KernelCounts:
    """Work and traffic of one kernel call; all traffic in bytes."""

    flops: int
    mem_bytes: int
    reg_bytes: int

    def __post_init__(self):
        if min(self.flops, self.mem_bytes, self.reg_bytes) < 0:
            raise ValueError("kernel counts must be non-negative")


def bop_counts(z: int, k: int, traffic: str = "ecm") -> KernelCounts:
    """Counts for an spBOP over ``z`` nonzeros and ``k`` vectors.

    ``traffic="ecm"`` uses ``2z + 2kz`` doubles of memory traffic;
    ``traffic="ai"`` uses the ``(k+1)`` doubles per nonzero of the
    arithmetic-intensity estimate.
    Register traffic is ``z (2 + 2k)`` doubles in both cases.
    """
    if z < 1 or k < 1:
        raise ValueError("z and k must be >= 1")
    if traffic == "ecm":
        mem = 2 * z + 2 * k * z
    elif traffic == "ai":
        mem = z * (k + 1)
    else:
        raise ValueError(f"unknown traffic model {traffic!r}")
    return KernelCounts(2 * k * z, DOUBLE * mem, DOUBLE * z * (2 + 2 * k))


@dataclass(frozen=True)
class MachineParams:
    peak_flops: float
    mem_bandwidth: float
    reg_bandwidth: float

    def __post_init__(self):
        if min(self.peak_flops, self.mem_bandwidth, self.reg_bandwidth) <= 0.0:
            raise ValueError("machine parameters must be positive")


# single core of the reference socket (flop/s, byte/s, byte/s)
REFERENCE_MACHINE = MachineParams(38.4e9, 6.39e9, 286.1e9)


class Binding(str, enum.Enum):
    COMP = "comp"
    MEM = "mem"
    REG = "reg"


def ecm_time(counts: KernelCounts, machine: MachineParams) -> tuple[float, Binding]:
    """``T = max(T_comp, T_mem, T_reg)`` and the bound attaining it."""
    parts = {
        Binding.COMP: counts.flops / machine.peak_flops,
        Binding.MEM: counts.mem_bytes / machine.mem_bandwidth,
        Binding.REG: counts.reg_bytes / machine.reg_bandwidth,
    }
    binding = max(parts, key=parts.get)
    return parts[binding], binding


# ---------------------------------------------------------------------------
# microbenchmark

BENCH_HEADER = ("k", "time_per_rhs_ns", "model_time_per_rhs_ns", "binding")


@dataclass(frozen=True)
class BenchRow:
    k: int
    time_per_rhs_ns: float
    model_time_per_rhs_ns: float
    binding: Binding


@dataclass
class BenchReport:
    rows: list
    warnings: list
    n_rows: int
    nnz: int

    def by_k(self) -> dict:
        return {r.k: r for r in self.rows}


def banded_matrix(n: int, z_per_row: int, seed: int = 0) -> CsrMatrix:
    """``n x n`` matrix with exactly ``z_per_row`` nonzeros per row on cyclic bands."""
    if z_per_row < 1 or z_per_row > n:
        raise ValueError("need 1 <= z_per_row <= n")
    rng = np.random.default_rng(seed)
    offsets = np.arange(z_per_row) - z_per_row // 2
    offsets[offsets < 0] *= 1 + n // (4 * z_per_row)  # spread the lower bands
    rows = np.repeat(np.arange(n), z_per_row)
    cols = (rows + np.tile(offsets, n)) % n
    return CsrMatrix.from_triplets(n, n, rows, cols, rng.standard_normal(rows.size))


def has_simd() -> bool:
    """Best-effort check for vector instructions on the host CPU."""
    try:
        with open("/proc/cpuinfo") as fh:
            flags = fh.read()
    except OSError:
        return True
    return any(f in flags for f in (" sse2", " avx", " asimd", " neon"))


def run_bop_microbenchmark(n: int = 1 << 20, z_per_row: int = 7, k_list=(1, 2, 4, 8, 16),
                           repetitions: int = 5, seed: int = 0,
                           machine: MachineParams = REFERENCE_MACHINE,
                           csv_path=None) -> BenchReport:
    """Median wall-clock time per right-hand side of spBOP next to the model prediction."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    a = banded_matrix(n, z_per_row, seed)
    rng = np.random.default_rng(seed + 1)
    resolution = time.get_clock_info("perf_counter").resolution
    spbop_array(a, np.ones((n, 1)))  # compile
    rows, warnings = [], []
    for k in k_list:
        x = rng.standard_normal((n, k))
        out = np.empty((n, k))
        spbop_array(a, x, out)
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            spbop_array(a, x, out)
            samples.append(time.perf_counter() - t0)
        med = float(np.median(samples))
        if med < 100.0 * resolution:
            msg = f"k={k}: median {med:.3g}s is within 100x timer resolution {resolution:.3g}s"
            warnings.append(msg)
            log.warning(msg)
        t_model, binding = ecm_time(bop_counts(a.values.size, k), machine)
        rows.append(BenchRow(k, med / k * 1e9, t_model / k * 1e9, binding))
    report = BenchReport(rows, warnings, n, a.values.size)
    if csv_path is not None:
        write_bench_csv(csv_path, report)
    return report


def write_bench_csv(path, report: BenchReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_HEADER)
        for r in report.rows:
            w.writerow((r.k, f"{r.time_per_rhs_ns:.6g}", f"{r.model_time_per_rhs_ns:.6g}",
                        r.binding.value))
