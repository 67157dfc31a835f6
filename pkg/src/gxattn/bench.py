"""Wall-time and MAC benchmarks: baseline attention versus grouped attention.

Each grid point (C, H, W, G) runs ``nonlocal_forward`` and
``cross_attention_forward`` on identical random float32 inputs, takes the
median of repeated timings, and records the exact per-direction MAC counts
from the ledger. The exact baseline/grouped MAC ratio G is asserted for
every valid point (integer equality, never tolerance); wall-times are
reported for context because they depend on the machine. Timed sections pin
the BLAS thread pool to one thread and record that in the report.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import (AttentionConfig, FlopLedger, ProjectionSet,
                        cross_attention_forward, nonlocal_forward)
from .errors import ConfigError
from .rng import substream
from .tensor import Tensor

GRID_PRESETS = {
    # exact-count sweep; small shapes, every divisibility pattern
    "flops": [(4, 8, 8, 1), (4, 8, 8, 2), (4, 8, 8, 4), (8, 8, 8, 4),
              (8, 16, 16, 2), (8, 16, 16, 8), (16, 8, 8, 16), (6, 6, 6, 9)],
    # wall-time sweep at the reference point
    "walltime": [(32, 64, 64, 1), (32, 64, 64, 2), (32, 64, 64, 4),
                 (32, 64, 64, 8), (32, 64, 64, 16)],
}

REPORT_COLUMNS = ["kind", "C", "H", "W", "G", "attention_mults", "total_mults",
                  "wall_ms", "speedup", "threads", "note"]


@dataclass
class BenchRow:
    kind: str
    c: int
    h: int
    w: int
    g: int
    attention_mults: int | None = None
    total_mults: int | None = None
    wall_ms: float | None = None
    speedup: float | None = None
    threads: int = 1
    note: str = ""

    def as_record(self) -> list:
        def fmt(v):
            return "" if v is None else v

        return [self.kind, self.c, self.h, self.w, self.g,
                fmt(self.attention_mults), fmt(self.total_mults),
                "" if self.wall_ms is None else f"{self.wall_ms:.3f}",
                "" if self.speedup is None else f"{self.speedup:.3f}",
                self.threads, self.note]


def parse_grid(text: str) -> list[tuple[int, int, int, int]]:
    """Preset name or semicolon-separated C,H,W,G quadruples."""
    if text in GRID_PRESETS:
        return list(GRID_PRESETS[text])
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 4:
            raise ConfigError(f"grid point {chunk!r} is not C,H,W,G")
        try:
            points.append(tuple(int(p) for p in parts))
        except ValueError:
            raise ConfigError(f"grid point {chunk!r} holds a non-integer") from None
    if not points:
        raise ConfigError(f"grid {text!r} contains no points")
    return points


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    return statistics.median(times)


def run_grid(grid: list[tuple[int, int, int, int]], repeats: int = 5,
             seed: int = 0) -> list[BenchRow]:
    """Benchmark every grid point; invalid points become warning rows.

    For each distinct (C, H, W) the baseline runs once and is reused as the
    speedup denominator for all its group factors. Raises ``AssertionError``
    if any valid point violates the exact MAC-ratio invariant.
    """
    if repeats < 5:
        raise ConfigError(f"need at least 5 repeats for a stable median, got {repeats}")
    rows: list[BenchRow] = []
    baselines: dict[tuple[int, int, int], tuple[float, FlopLedger]] = {}
    rng = substream(seed, "bench")

    with threadpool_limits(limits=1):
        for c, h, w, g in grid:
            if c % 2 != 0:
                rows.append(BenchRow("skipped", c, h, w, g,
                                     note=f"odd channel count {c}"))
                continue
            if (h * w) % g != 0:
                rows.append(BenchRow("skipped", c, h, w, g,
                                     note=f"G={g} does not divide N={h * w}"))
                continue

            key = (c, h, w)
            if key not in baselines:
                proj = ProjectionSet.initialize(c, rng, dtype=np.float32)
                x = Tensor(rng.normal(size=(c, h, w)).astype(np.float32))
                out, ledger = nonlocal_forward(x, proj)
                ms = _median_ms(lambda: nonlocal_forward(x, proj), repeats)
                baselines[key] = (ms, ledger)
                rows.append(BenchRow("nonlocal", c, h, w, 1,
                                     attention_mults=ledger.attention_mults,
                                     total_mults=ledger.total,
                                     wall_ms=ms, speedup=1.0))

            base_ms, base_ledger = baselines[key]
            proj_a = ProjectionSet.initialize(c, rng, dtype=np.float32)
            proj_b = ProjectionSet.initialize(c, rng, dtype=np.float32)
            x_a = Tensor(rng.normal(size=(c, h, w)).astype(np.float32))
            x_b = Tensor(rng.normal(size=(c, h, w)).astype(np.float32))
            cfg = AttentionConfig(group_factor=g)
            *_, ledger = cross_attention_forward(x_a, x_b, proj_a, proj_b, cfg)
            assert base_ledger.attention_mults == g * ledger.attention_mults, (
                f"MAC ratio broken at C={c} H={h} W={w} G={g}: "
                f"{base_ledger.attention_mults} != {g} * {ledger.attention_mults}"
            )
            ms = _median_ms(
                lambda: cross_attention_forward(x_a, x_b, proj_a, proj_b, cfg), repeats)
            rows.append(BenchRow("grouped", c, h, w, g,
                                 attention_mults=ledger.attention_mults,
                                 total_mults=ledger.total,
                                 wall_ms=ms, speedup=base_ms / ms))
    return rows


def write_report(path, rows: list[BenchRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow(row.as_record())


def summarize(rows: list[BenchRow]) -> str:
    lines = []
    for row in rows:
        if row.kind == "skipped":
            lines.append(f"skip C={row.c} H={row.h} W={row.w} G={row.g}: {row.note}")
        else:
            lines.append(
                f"{row.kind:8s} C={row.c:<3d} H={row.h:<3d} W={row.w:<3d} G={row.g:<3d} "
                f"attn_MACs={row.attention_mults:<12d} wall={row.wall_ms:8.3f} ms "
                f"speedup={row.speedup:5.2f}x"
            )
    return "\n".join(lines)
