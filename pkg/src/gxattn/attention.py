"""Spatial attention blocks over feature maps, with exact MAC accounting.

Two forward paths share one projection layout:

* ``nonlocal_forward``: classic self-attention over all H*W positions of a
  single C x H x W map, Z = softmax(Q K^T) V, with unscaled logits.
* ``cross_attention_forward``: two modality maps attend to each other. The
  query comes from the opposite modality while key and value stay within the
  modality. Before attention, the N = H*W positions are partitioned into
  ``group_factor`` groups of size S = N / group_factor and the group index is
  folded into the channel axis (N x C' becomes S x Chat with Chat =
  C' * group_factor), which shrinks each attention matrix from N x N to
  S x S and divides the attention-matmul cost by exactly ``group_factor``.
  Logits are scaled by 1/sqrt(Chat).

Blocks are immutable after construction; concurrent forward calls on shared
projections are safe. Every forward op is recorded on the gradient tape, the
re-assembly included, so the whole block is differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import substream
from .tensor import Tensor

PARTITION_MODES = ("contiguous", "seeded_random")


@dataclass(frozen=True)
class AttentionConfig:
    """Grouped cross-attention hyperparameters.

    ``group_factor`` must divide H*W. ``partition`` picks how positions are
    assigned to groups: ``contiguous`` takes blocks of the row-major order,
    ``seeded_random`` shuffles positions first with a deterministic
    permutation drawn from ``partition_seed``. ``scale_logits`` applies the
    1/sqrt(Chat) factor; ``residual`` adds the block input to the projected
    output.
    """

    group_factor: int = 1
    partition: str = "contiguous"
    partition_seed: int = 0
    residual: bool = True
    scale_logits: bool = True

    def __post_init__(self):
        if self.group_factor < 1:
            raise ConfigError(f"group_factor must be positive, got {self.group_factor}")
        if self.partition not in PARTITION_MODES:
            raise ConfigError(f"partition must be one of {PARTITION_MODES}, got {self.partition!r}")


@dataclass(frozen=True)
class FlopLedger:
    """Multiply-accumulate counts for one attention direction.

    ``attention_mults`` covers the two attention matmuls (logits and the
    value product); ``projection_mults`` covers the four 1x1 projections
    (query, key, value, out). ``cross_attention_forward`` computes two
    directions of identical cost and reports the shared per-direction count,
    so baseline/grouped ratios compare like for like.
    """

    attention_mults: int
    projection_mults: int

    @property
    def total(self) -> int:
        return self.attention_mults + self.projection_mults

    @classmethod
    def for_nonlocal(cls, channels: int, height: int, width: int) -> "FlopLedger":
        n = height * width
        c_embed = channels // 2
        return cls(attention_mults=2 * n * n * c_embed,
                   projection_mults=4 * n * channels * c_embed)

    @classmethod
    def for_grouped(cls, channels: int, height: int, width: int, group_factor: int) -> "FlopLedger":
        n = height * width
        c_embed = channels // 2
        s = n // group_factor
        c_hat = c_embed * group_factor
        return cls(attention_mults=2 * s * s * c_hat,
                   projection_mults=4 * n * channels * c_embed)


def _init_linear(rng: np.random.Generator, out_dim: int, in_dim: int, dtype) -> Tensor:
    bound = math.sqrt(1.0 / in_dim)
    data = rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype)
    return Tensor(data, requires_grad=True)


@dataclass
class ProjectionSet:
    """Query/key/value embeddings (C to C' = C/2) and the C'-to-C out map."""

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_out: Tensor
    b_out: Tensor

    def __post_init__(self):
        c_embed, c = self.w_q.shape
        if c % 2 != 0 or c_embed != c // 2:
            raise ConfigError(f"embedding must halve an even channel count, got {self.w_q.shape}")
        for name, w, expect in (("w_k", self.w_k, (c_embed, c)),
                                ("w_v", self.w_v, (c_embed, c)),
                                ("w_out", self.w_out, (c, c_embed))):
            if w.shape != expect:
                raise ShapeError(f"{name} must have shape {expect}, got {w.shape}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[1]

    @property
    def embed_channels(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def initialize(cls, channels: int, rng: np.random.Generator, dtype=np.float32) -> "ProjectionSet":
        """Uniform weights with bound sqrt(1/fan_in) and zero biases."""
        if channels % 2 != 0:
            raise ConfigError(f"channel count must be even to embed at C/2, got {channels}")
        c_embed = channels // 2

        def zero_bias(dim):
            return Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

        return cls(
            w_q=_init_linear(rng, c_embed, channels, dtype), b_q=zero_bias(c_embed),
            w_k=_init_linear(rng, c_embed, channels, dtype), b_k=zero_bias(c_embed),
            w_v=_init_linear(rng, c_embed, channels, dtype), b_v=zero_bias(c_embed),
            w_out=_init_linear(rng, channels, c_embed, dtype), b_out=zero_bias(channels),
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"q_weight": self.w_q, "q_bias": self.b_q,
                "k_weight": self.w_k, "k_bias": self.b_k,
                "v_weight": self.w_v, "v_bias": self.b_v,
                "out_weight": self.w_out, "out_bias": self.b_out}

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ProjectionSet":
        def grab(name):
            return Tensor(arrays[name].copy(), requires_grad=True)

        return cls(w_q=grab("q_weight"), b_q=grab("q_bias"),
                   w_k=grab("k_weight"), b_k=grab("k_bias"),
                   w_v=grab("v_weight"), b_v=grab("v_bias"),
                   w_out=grab("out_weight"), b_out=grab("out_bias"))


def _check_feature_map(x: Tensor, where: str) -> tuple[int, int, int]:
    if x.ndim != 3:
        raise ShapeError(f"{where}: expected a C x H x W map, got shape {x.shape}")
    return x.shape


def _flatten_positions(x: Tensor) -> Tensor:
    """C x H x W to (H*W) x C."""
    c, h, w = x.shape
    return T.permute(T.reshape(x, (c, h * w)), (1, 0))


def _unflatten_positions(x: Tensor, shape: tuple[int, int, int]) -> Tensor:
    """(H*W) x C back to C x H x W."""
    c, h, w = shape
    return T.reshape(T.permute(x, (1, 0)), (c, h, w))


def _partition_order(cfg: AttentionConfig, n: int) -> np.ndarray | None:
    """Position permutation applied before grouping; None means identity."""
    if cfg.partition == "contiguous":
        return None
    return substream(cfg.partition_seed, "partition").permutation(n)


def regroup_spatial(x: Tensor, cfg: AttentionConfig) -> Tensor:
    """Fold a spatial grouping into channels: N x C' to S x (C' * G).

    Output(s, g*C' + c) = x(pi(g*S + s), c) where pi is the configured
    position permutation (identity for contiguous partitions).
    """
    if x.ndim != 2:
        raise ShapeError(f"regroup_spatial: expected N x C', got shape {x.shape}")
    n, c_embed = x.shape
    g = cfg.group_factor
    if n % g != 0:
        raise ConfigError(f"group_factor {g} does not divide the {n} spatial positions")
    order = _partition_order(cfg, n)
    if order is not None:
        x = T.reorder_rows(x, order)
    s = n // g
    grouped = T.reshape(x, (g, s, c_embed))
    return T.reshape(T.permute(grouped, (1, 0, 2)), (s, g * c_embed))


def restore_spatial(z: Tensor, cfg: AttentionConfig, shape: tuple[int, int, int]) -> Tensor:
    """Exact inverse of :func:`regroup_spatial`, then unflatten to C' x H x W."""
    c_embed, h, w = shape
    n = h * w
    g = cfg.group_factor
    if z.ndim != 2 or z.shape[0] * z.shape[1] != n * c_embed or n % g != 0:
        raise ShapeError(
            f"restore_spatial: grouped shape {z.shape} does not match target {shape} with G={g}"
        )
    s = n // g
    if z.shape != (s, g * c_embed):
        raise ShapeError(f"restore_spatial: expected shape {(s, g * c_embed)}, got {z.shape}")
    ungrouped = T.permute(T.reshape(z, (s, g, c_embed)), (1, 0, 2))
    flat = T.reshape(ungrouped, (n, c_embed))
    order = _partition_order(cfg, n)
    if order is not None:
        flat = T.reorder_rows(flat, np.argsort(order))
    return _unflatten_positions(flat, (c_embed, h, w))


def _project_qkv(x: Tensor, proj: ProjectionSet) -> tuple[Tensor, Tensor, Tensor]:
    q = _flatten_positions(T.conv1x1(x, proj.w_q, proj.b_q))
    k = _flatten_positions(T.conv1x1(x, proj.w_k, proj.b_k))
    v = _flatten_positions(T.conv1x1(x, proj.w_v, proj.b_v))
    return q, k, v


def attention_weights(q: Tensor, k: Tensor, scale: float | None = None) -> Tensor:
    """Row-stochastic affinity matrix softmax(q k^T * scale); rows sum to 1."""
    logits = T.matmul(q, T.permute(k, (1, 0)))
    if scale is not None:
        logits = T.scale(logits, scale)
    return T.softmax(logits, axis=1)


def _attend(q: Tensor, k: Tensor, v: Tensor, scale: float | None) -> Tensor:
    return T.matmul(attention_weights(q, k, scale), v)


def nonlocal_forward(x: Tensor, proj: ProjectionSet,
                     residual: bool = True) -> tuple[Tensor, FlopLedger]:
    """Self-attention across all positions of one map; logits unscaled."""
    c, h, w = _check_feature_map(x, "nonlocal_forward")
    if c % 2 != 0:
        raise ConfigError(f"nonlocal_forward: channel count must be even, got {c}")
    if proj.channels != c:
        raise ShapeError(f"nonlocal_forward: projections expect C={proj.channels}, map has C={c}")
    q, k, v = _project_qkv(x, proj)
    z = _attend(q, k, v, scale=None)
    out = T.conv1x1(_unflatten_positions(z, (proj.embed_channels, h, w)),
                    proj.w_out, proj.b_out)
    if residual:
        out = T.add(out, x)
    return out, FlopLedger.for_nonlocal(c, h, w)


def _cross_direction(q_other: Tensor, k_own: Tensor, v_own: Tensor, x_own: Tensor,
                     proj_own: ProjectionSet, cfg: AttentionConfig,
                     shape: tuple[int, int, int]) -> Tensor:
    c, h, w = shape
    c_embed = proj_own.embed_channels
    c_hat = c_embed * cfg.group_factor
    scale = 1.0 / math.sqrt(c_hat) if cfg.scale_logits else None
    z = _attend(regroup_spatial(q_other, cfg),
                regroup_spatial(k_own, cfg),
                regroup_spatial(v_own, cfg),
                scale)
    out = T.conv1x1(restore_spatial(z, cfg, (c_embed, h, w)), proj_own.w_out, proj_own.b_out)
    if cfg.residual:
        out = T.add(out, x_own)
    return out


def cross_attention_forward(x_a: Tensor, x_b: Tensor,
                            proj_a: ProjectionSet, proj_b: ProjectionSet,
                            cfg: AttentionConfig) -> tuple[Tensor, Tensor, FlopLedger]:
    """Grouped cross-modal attention in both directions.

    Direction a consumes queries projected from modality b and keys/values
    from modality a (and symmetrically for direction b); both outputs keep
    the input shape C x H x W and share one per-direction ledger.
    """
    shape_a = _check_feature_map(x_a, "cross_attention_forward")
    shape_b = _check_feature_map(x_b, "cross_attention_forward")
    if shape_a != shape_b:
        raise ShapeError(
            f"cross_attention_forward: modality shapes {shape_a} and {shape_b} must match"
        )
    c, h, w = shape_a
    if c % 2 != 0:
        raise ConfigError(f"cross_attention_forward: channel count must be even, got {c}")
    if proj_a.channels != c or proj_b.channels != c:
        raise ShapeError("cross_attention_forward: projection channel counts do not match inputs")
    n = h * w
    if n % cfg.group_factor != 0:
        raise ConfigError(
            f"group_factor {cfg.group_factor} does not divide N={n} spatial positions"
        )
    q_a, k_a, v_a = _project_qkv(x_a, proj_a)
    q_b, k_b, v_b = _project_qkv(x_b, proj_b)
    z_a = _cross_direction(q_b, k_a, v_a, x_a, proj_a, cfg, shape_a)
    z_b = _cross_direction(q_a, k_b, v_b, x_b, proj_b, cfg, shape_b)
    return z_a, z_b, FlopLedger.for_grouped(c, h, w, cfg.group_factor)
