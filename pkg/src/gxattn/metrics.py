"""Counting-error metrics over paired density maps.

``game(preds, gts, level)`` splits each map into a 2^level x 2^level grid of
regions, sums absolute count errors per region, and averages over images.
Region boundaries along an extent E sit at floor(E * i / 2^level), so each
level's grid refines the previous one (boundaries at level L all reappear at
level L+1) and the metric is non-decreasing in the level; for extents
divisible by 2^level this coincides with equal-sized regions. Level 0 uses
the whole map, which makes it the mean absolute count error, and ``mae`` is
defined as exactly that call.

All functions are pure and accept numpy arrays or Tensors.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ContractError


def _as_map(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"density maps must be 2-D, got shape {arr.shape}")
    return arr


def _paired(preds, gts) -> list[tuple[np.ndarray, np.ndarray]]:
    preds, gts = list(preds), list(gts)
    if not preds or len(preds) != len(gts):
        raise ContractError(
            f"need equally many predictions and ground truths, got {len(preds)} and {len(gts)}"
        )
    pairs = []
    for pred, gt in zip(preds, gts):
        p, g = _as_map(pred), _as_map(gt)
        if p.shape != g.shape:
            raise ContractError(f"paired maps must share shape, got {p.shape} and {g.shape}")
        pairs.append((p, g))
    return pairs


def _bounds(extent: int, parts: int) -> list[int]:
    return [extent * i // parts for i in range(parts + 1)]


def game(preds, gts, level: int) -> float:
    """Grid average mean absolute error at the given refinement level."""
    if level < 0 or int(level) != level:
        raise ContractError(f"level must be a nonnegative integer, got {level}")
    pairs = _paired(preds, gts)
    parts = 2 ** int(level)
    total = 0.0
    for pred, gt in pairs:
        h, w = pred.shape
        rows, cols = _bounds(h, parts), _bounds(w, parts)
        for i in range(parts):
            for j in range(parts):
                block = (slice(rows[i], rows[i + 1]), slice(cols[j], cols[j + 1]))
                total += abs(pred[block].sum() - gt[block].sum())
    return float(total / len(pairs))


def mae(preds, gts) -> float:
    """Mean absolute total-count error; identical to level-0 ``game``."""
    return game(preds, gts, 0)


def rmse(preds, gts) -> float:
    """Root mean squared total-count error."""
    pairs = _paired(preds, gts)
    squared = [(pred.sum() - gt.sum()) ** 2 for pred, gt in pairs]
    return float(np.sqrt(np.mean(squared)))


def write_metric_report(path, rows: list[tuple[str, object, float]]) -> None:
    """Emit a CSV with columns metric, L, value; L may be empty for scalars."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "L", "value"])
        for metric, level, value in rows:
            writer.writerow([metric, "" if level is None else level, repr(float(value))])


def read_metric_report(path) -> list[tuple[str, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["metric", "L", "value"]:
            raise ContractError(f"unexpected report header {header}")
        return [(metric, level, float(value)) for metric, level, value in reader]
