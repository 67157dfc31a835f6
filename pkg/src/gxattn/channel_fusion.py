"""Channel-wise fusion of two modality feature streams.

The two C x H x W streams are concatenated along channels, pushed through a
per-pixel bottleneck MLP (two 1x1 convolutions, 2C -> 2C/r -> 2C with a ReLU
between), and the resulting logits are softmax-normalized per channel pair
{c, C+c}. That yields competing weights w_a, w_b in (0,1) with
w_a + w_b = 1 at every (c, h, w); the fused map is their convex combination
of the aggregation inputs.

The convex combination is evaluated in difference form,
``agg_b + w_a * (agg_a - agg_b)``, so equal inputs pass through bit-exactly
regardless of the learned weights.

Weights are immutable after construction; concurrent forward calls are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class FusionMlp:
    """Per-pixel bottleneck producing the pre-softmax fusion logits."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    reduction: int

    def __post_init__(self):
        hidden, doubled = self.w1.shape
        if doubled % 2 != 0:
            raise ConfigError(f"fusion MLP input must cover both streams, got {doubled} channels")
        if doubled % self.reduction != 0 or hidden != doubled // self.reduction:
            raise ConfigError(
                f"reduction {self.reduction} does not divide the {doubled}-channel concat"
            )
        if self.w2.shape != (doubled, hidden):
            raise ShapeError(f"w2 must have shape {(doubled, hidden)}, got {self.w2.shape}")

    @property
    def channels(self) -> int:
        return self.w1.shape[1] // 2

    @classmethod
    def initialize(cls, channels: int, rng: np.random.Generator,
                   reduction: int = 4, dtype=np.float32) -> "FusionMlp":
        """He-scaled hidden layer, small logit layer, zero biases.

        The second layer stays at bound sqrt(1/fan_in) so initial logits sit
        near zero: the pairwise softmax then starts close to an even 0.5/0.5
        blend, where its gradient is largest.
        """
        doubled = 2 * channels
        if doubled % reduction != 0:
            raise ConfigError(f"reduction {reduction} does not divide {doubled} channels")
        hidden = doubled // reduction

        def linear(out_dim, in_dim, gain):
            bound = math.sqrt(gain / in_dim)
            return Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)).astype(dtype),
                          requires_grad=True)

        return cls(
            w1=linear(hidden, doubled, 6.0),
            b1=Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
            w2=linear(doubled, hidden, 1.0),
            b2=Tensor(np.zeros(doubled, dtype=dtype), requires_grad=True),
            reduction=reduction,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"mix1_weight": self.w1, "mix1_bias": self.b1,
                "mix2_weight": self.w2, "mix2_bias": self.b2}

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], reduction: int = 4) -> "FusionMlp":
        def grab(name):
            return Tensor(arrays[name].copy(), requires_grad=True)

        return cls(w1=grab("mix1_weight"), b1=grab("mix1_bias"),
                   w2=grab("mix2_weight"), b2=grab("mix2_bias"), reduction=reduction)


@dataclass
class ModalityWeights:
    """Competing per-element weights; w_a + w_b = 1 within float rounding."""

    w_a: Tensor
    w_b: Tensor


def channel_fusion_forward(z_a: Tensor, z_b: Tensor, mlp: FusionMlp,
                           agg_a: Tensor | None = None,
                           agg_b: Tensor | None = None) -> tuple[Tensor, ModalityWeights]:
    """Fuse two streams into one map plus the weight pair that produced it.

    The weights always come from (z_a, z_b); the convex combination applies
    to (agg_a, agg_b) when given, which lets a caller weight raw backbone
    features by attention-derived evidence. Defaults aggregate (z_a, z_b).
    """
    if z_a.shape != z_b.shape or z_a.ndim != 3:
        raise ShapeError(f"channel_fusion_forward: stream shapes {z_a.shape} and {z_b.shape} "
                         "must be identical C x H x W")
    c, h, w = z_a.shape
    if mlp.channels != c:
        raise ShapeError(f"channel_fusion_forward: MLP expects C={mlp.channels}, streams have C={c}")
    agg_a = z_a if agg_a is None else agg_a
    agg_b = z_b if agg_b is None else agg_b
    if agg_a.shape != z_a.shape or agg_b.shape != z_b.shape:
        raise ShapeError("channel_fusion_forward: aggregation inputs must match stream shapes")

    stacked = T.concat([z_a, z_b], axis=0)
    hidden = T.relu(T.conv1x1(stacked, mlp.w1, mlp.b1))
    logits = T.conv1x1(hidden, mlp.w2, mlp.b2)

    paired = T.softmax(T.reshape(logits, (2, c, h, w)), axis=0)
    w_a = T.reshape(T.narrow(paired, 0, 0, 1), (c, h, w))
    w_b = T.reshape(T.narrow(paired, 0, 1, 1), (c, h, w))

    fused = T.add(agg_b, T.hadamard(w_a, T.sub(agg_a, agg_b)))
    return fused, ModalityWeights(w_a=w_a, w_b=w_b)


def propagate_update(f_agg: Tensor, f_modality: Tensor) -> Tensor:
    """Feature handed to the next stage: the mean of fused and modality maps."""
    if f_agg.shape != f_modality.shape:
        raise ShapeError(f"propagate_update: shapes {f_agg.shape} and {f_modality.shape} must match")
    return T.scale(T.add(f_agg, f_modality), 0.5)
