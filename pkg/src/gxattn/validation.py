"""Input validation helpers for the estimator facade and CLI."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def check_modal_pair(mod_a, mod_b) -> tuple[np.ndarray, np.ndarray]:
    """Two registered C x H x W views as float arrays of identical shape."""
    a = np.asarray(mod_a, dtype=np.float32)
    b = np.asarray(mod_b, dtype=np.float32)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"modalities must be C x H x W, got {a.shape} and {b.shape}")
    if a.shape != b.shape:
        raise ShapeError(f"modalities must be registered, got {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ContractError("modalities contain non-finite values")
    return a, b


def check_pair_stack(X) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sample matrix for the estimator: (n, 2, C, H, W) array or pair list.

    Returns one validated (mod_a, mod_b) tuple per sample; all samples must
    share a shape.
    """
    if isinstance(X, np.ndarray):
        if X.ndim != 5 or X.shape[1] != 2:
            raise ShapeError(f"stacked input must be (n, 2, C, H, W), got {X.shape}")
        pairs = [(X[i, 0], X[i, 1]) for i in range(X.shape[0])]
    else:
        pairs = [(a, b) for a, b in X]
    if not pairs:
        raise ContractError("need at least one sample")
    checked = [check_modal_pair(a, b) for a, b in pairs]
    first = checked[0][0].shape
    for a, _ in checked[1:]:
        if a.shape != first:
            raise ShapeError(f"samples disagree on shape: {first} vs {a.shape}")
    return checked


def check_density_stack(y, n: int) -> list[np.ndarray]:
    """Ground-truth maps: (n, H', W') array or list of 2-D arrays."""
    maps = [np.asarray(m, dtype=np.float32) for m in y]
    if len(maps) != n:
        raise ContractError(f"got {len(maps)} ground-truth maps for {n} samples")
    for m in maps:
        if m.ndim != 2:
            raise ShapeError(f"density maps must be 2-D, got shape {m.shape}")
        if not np.isfinite(m).all():
            raise ContractError("density maps contain non-finite values")
    if any(m.shape != maps[0].shape for m in maps):
        raise ShapeError("density maps disagree on shape")
    return maps


def check_seed(seed) -> int:
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool) or seed < 0:
        raise ContractError(f"seed must be a nonnegative integer, got {seed!r}")
    return int(seed)
