"""Parameter and FLOP accounting for KCP against competing tensor formats.

Two kinds of numbers live here and must not be confused:

* ``table1_space`` / ``table1_flops`` evaluate order-of-magnitude closed
  forms with unit constants and a single max mode size per side.  They are
  comparison curves across formats (Ori/TT/BT/TR/HT/KCP), not exact counts.
* ``kcp_param_count`` is an exact stored-scalar count for KCP weights,
  including the four-gate replication of an LSTM cell and the
  first-mode-only unsharing scheme.  These reproduce the published
  benchmark tables to the integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .multiply import count_flops_strict
from .weights import KCPConfig

__all__ = [
    "FormatSpec",
    "ComplexityReport",
    "FORMATS",
    "table1_space",
    "table1_flops",
    "kcp_param_count",
    "cell_flops",
    "kcp_cell_report",
    "compression_ratio",
    "figure4_curves",
    "bt_rank_parity",
    "BenchmarkEntry",
    "BENCHMARK_TABLE",
    "benchmark_rows",
]

FORMATS = ("Ori", "TT", "BT", "TR", "HT", "KCP")


@dataclass(frozen=True)
class FormatSpec:
    """Inputs to the closed-form complexity expressions.

    ``m`` and ``n`` are max mode sizes, ``r`` the generic rank (for KCP the
    common per-branch rank on both sides), ``P`` the block count (BT only),
    ``K`` the branch count (KCP only).
    """

    format: str
    d: int
    m: int
    n: int
    r: int = 1
    P: int = 1
    K: int = 1

    def __post_init__(self):
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}, expected one of {FORMATS}")
        for name in ("d", "m", "n", "r", "P", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class ComplexityReport:
    params: int
    flops: int
    compression_ratio: float


def table1_space(spec: FormatSpec) -> int:
    """Stored-parameter closed form for one format, unit constants."""
    d, m, n, r = spec.d, spec.m, spec.n, spec.r
    if spec.format == "Ori":
        return (m * n) ** d
    if spec.format == "TT":
        return (d - 2) * m * n * r**2 + 2 * m * n * r
    if spec.format == "BT":
        return (d * m * n * r + r**d) * spec.P
    if spec.format == "TR":
        return d * (m + n) * r**2
    if spec.format == "HT":
        return (d - 1) * r**3 + d * m * n * r
    return d * (m + n) * r * spec.K  # KCP


def table1_flops(spec: FormatSpec) -> int:
    """Multiplication-cost closed form for one format, unit constants."""
    d, m, n, r = spec.d, spec.m, spec.n, spec.r
    big = max(m, n)
    if spec.format == "Ori":
        return (m * n) ** d
    if spec.format == "TT":
        return d * big ** (d + 1) * r**2
    if spec.format == "BT":
        return (d * big ** (d + 1) + n**d) * r**d * spec.P
    if spec.format == "TR":
        return d * (m**d + n**d) * r**3
    if spec.format == "HT":
        return round((2 * d - 1) * big ** (d + 1) * r ** (1 + math.log2(d)))
    return d * big**d * (r + r**2) * spec.K  # KCP


def kcp_param_count(config: KCPConfig, gates: int, sharing: bool) -> int:
    """Exact stored scalars for ``gates`` KCP input weights.

    Without sharing every gate stores a full factor set.  With sharing the
    gates share one factor set except for the first-mode factors (both
    sides), which stay per gate.
    """
    if gates < 1:
        raise ValueError("gates must be >= 1")
    per_mode = [
        sum(config.m[i] * a + config.n[i] * b for a, b in zip(config.cA, config.cB))
        for i in range(config.d)
    ]
    if not sharing:
        return gates * sum(per_mode)
    return gates * per_mode[0] + sum(per_mode[1:])


def compression_ratio(
    config: KCPConfig, gates: int, sharing: bool, dense_params: int
) -> float:
    """Dense parameter count over KCP parameter count."""
    if dense_params <= 0:
        raise ValueError("dense_params must be positive")
    params = kcp_param_count(config, gates, sharing)
    if params == 0:
        raise ValueError("KCP parameter count is zero")
    return dense_params / params


def cell_flops(config: KCPConfig, gates: int = 4) -> int:
    """Per-timestep operation count of a whole compressed LSTM cell.

    Own convention, stated so the number is reproducible: per gate, the
    strict-route multiply count, a dense hidden-times-hidden product
    (N^2 multiplies, N(N-1) adds), two length-N vector adds (recurrent term
    and bias), and one nonlinearity per unit; plus the elementwise cell
    update (4N products, N adds, N squashes).  Published per-cell MFLOPs
    columns use an unstated convention, so this figure is reported next to
    them for comparison, never matched against them.
    """
    N = config.output_size
    per_gate = count_flops_strict(config) + N * N + N * (N - 1) + 2 * N + N
    return gates * per_gate + 5 * N + N


def kcp_cell_report(config: KCPConfig, gates: int, sharing: bool) -> ComplexityReport:
    """Exact parameter count, whole-cell op count, and compression ratio."""
    dense = gates * config.input_size * config.output_size
    return ComplexityReport(
        params=kcp_param_count(config, gates, sharing),
        flops=cell_flops(config, gates),
        compression_ratio=compression_ratio(config, gates, sharing, dense),
    )


def figure4_curves(d: int, m: int, n: int, r_range, P: int, K: int):
    """Parameter and FLOP curves over a rank sweep for the five compressed formats.

    Returns one ``(r, format, params, flops)`` tuple per rank per format.
    """
    rows = []
    for r in r_range:
        for fmt in FORMATS[1:]:
            spec = FormatSpec(fmt, d, m, n, r=r, P=P, K=K)
            rows.append((int(r), fmt, table1_space(spec), table1_flops(spec)))
    return rows


def bt_rank_parity(m: int, n: int, P: int) -> float:
    """Branch count that matches a P-block format at equal storage: m*n/(m+n) * P.

    Since m*n/(m+n) >= 1 whenever both sides are >= 2, the matched branch
    count is at least P.
    """
    if m < 2 or n < 2:
        raise ValueError("mode sizes must be >= 2")
    return m * n / (m + n) * P


@dataclass(frozen=True)
class BenchmarkEntry:
    """One published benchmark row: configuration plus reference values.

    ``reference_mflops`` is the published whole-cell figure; its counting
    convention is unstated, so it is carried for side-by-side display only.
    """

    dataset: str
    m: tuple[int, ...]
    n: tuple[int, ...]
    ranks: tuple[int, int, int]  # (K, cA, cB)
    sharing: bool
    reference_params: int
    reference_ratio: int
    reference_mflops: float

    @property
    def config(self) -> KCPConfig:
        K, cA, cB = self.ranks
        return KCPConfig.uniform(self.m, self.n, K, cA, cB)


_UCF11 = ((8, 20, 20, 18), (4, 4, 4, 4))
_YCF = ((4, 20, 20, 36), (4, 4, 4, 4))
_UCF50 = ((15, 16, 16, 15), (8, 6, 6, 8))

BENCHMARK_TABLE = (
    BenchmarkEntry("UCF11", *_UCF11, (4, 4, 2), False, 4736, 12454, 73.1),
    BenchmarkEntry("UCF11", *_UCF11, (4, 2, 2), False, 2624, 22478, 37.9),
    BenchmarkEntry("YCF", *_YCF, (4, 4, 2), False, 5632, 10473, 122.4),
    BenchmarkEntry("YCF", *_YCF, (4, 2, 2), False, 3072, 19200, 63.1),
    BenchmarkEntry("UCF50", *_UCF50, (6, 4, 4), False, 8640, 61440, 336.8),
    BenchmarkEntry("UCF50", *_UCF50, (6, 4, 2), False, 7296, 72758, 252.0),
    BenchmarkEntry("UCF50", *_UCF50, (6, 2, 2), False, 4320, 122880, 191.8),
    BenchmarkEntry("UCF11", *_UCF11, (4, 4, 2), True, 1664, 35446, 52.6),
    # the published 994 is not reproducible from the sharing scheme, which
    # yields 944; the row stays flagged as a mismatch
    BenchmarkEntry("UCF11", *_UCF11, (4, 2, 2), True, 994, 59338, 27.2),
    BenchmarkEntry("YCF", *_YCF, (4, 4, 2), True, 1696, 34777, 81.6),
    BenchmarkEntry("YCF", *_YCF, (4, 2, 2), True, 960, 61440, 41.9),
    BenchmarkEntry("UCF50", *_UCF50, (6, 4, 4), True, 3816, 139109, 257.8),
    BenchmarkEntry("UCF50", *_UCF50, (6, 4, 2), True, 3192, 166304, 210.1),
    BenchmarkEntry("UCF50", *_UCF50, (6, 2, 2), True, 1908, 278219, 169.3),
)

GATES = 4


def benchmark_rows():
    """Computed parameter counts and ratios against the reference table.

    Ratios are truncated toward zero; a row matches when the parameter
    counts are equal and the truncated ratio is within one of the reference
    (the published ratios were rounded, ours are truncated).  The mflops
    columns are informational and never affect the match flag.
    """
    rows = []
    for entry in BENCHMARK_TABLE:
        cfg = entry.config
        report = kcp_cell_report(cfg, GATES, entry.sharing)
        ratio = int(report.compression_ratio)
        match = (
            report.params == entry.reference_params
            and abs(ratio - entry.reference_ratio) <= 1
        )
        rows.append(
            {
                "dataset": entry.dataset,
                "ranks": entry.ranks,
                "sharing": entry.sharing,
                "params": report.params,
                "compression_ratio": ratio,
                "dense_params": GATES * cfg.input_size * cfg.output_size,
                "mflops": round(report.flops / 1e6, 1),
                "reference_params": entry.reference_params,
                "reference_ratio": entry.reference_ratio,
                "reference_mflops": entry.reference_mflops,
                "match": match,
            }
        )
    return rows
