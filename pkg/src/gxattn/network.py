"""Two-branch convolutional density regressor with per-stage fusion.

Each modality runs through a stack of 3x3 conv + ReLU stages (stride-2
downsampling where configured). In ``csca`` mode the configured fusion
stages (default: the last stage) are followed by a grouped cross-modal
attention block and a channel-wise fusion block: a fusion site below the
last stage averages its fused map back into each branch before the next
stage, while the last stage's fused map feeds the decoder directly. The
decoder is two 1x1 convolutions with ReLU, ending in a nonnegative
one-channel density map whose sum is the predicted count.

Ablation modes share the CLI surface: ``rgb_only`` / ``aux_only`` run a
single branch on one modality, ``early`` runs a single branch on the
channel-concatenated pair, and ``late`` runs both branches independently and
concatenates the final features before the decoder.

Training uses full-batch gradient descent on the mean squared density error.
Training mutates parameters in place and is single-threaded per network;
inference on a frozen network is safe concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, ProjectionSet, cross_attention_forward
from .channel_fusion import FusionMlp, channel_fusion_forward, propagate_update
from .errors import ConfigError, NumericError, ShapeError
from .rng import substream
from .tensor import Tensor, backward
from .tensorio import load_weights, read_config, save_weights, write_config

MODES = ("csca", "rgb_only", "aux_only", "early", "late")
AGGREGATE_SOURCES = ("attention_output", "backbone_feature")


@dataclass(frozen=True)
class StageConfig:
    """Architecture hyperparameters; immutable and checkpoint-serializable."""

    in_channels: int = 2
    channels: tuple[int, ...] = (8, 16)
    downsample: tuple[int, ...] = (2, 2)
    group_factors: tuple[int, ...] = (4, 4)
    input_extents: tuple[int, int] = (32, 32)
    mode: str = "csca"
    fusion_stages: str | tuple[int, ...] = "last"
    reduction: int = 4
    partition: str = "contiguous"
    partition_seed: int = 0
    residual: bool = True
    scale_logits: bool = True
    aggregate_source: str = "attention_output"
    decoder_hidden: int = 8

    def __post_init__(self):
        L = len(self.channels)
        if L < 1:
            raise ConfigError("need at least one stage")
        if len(self.downsample) != L or len(self.group_factors) != L:
            raise ConfigError(
                f"channels/downsample/group_factors lengths disagree: "
                f"{L}, {len(self.downsample)}, {len(self.group_factors)}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregate_source not in AGGREGATE_SOURCES:
            raise ConfigError(f"aggregate_source must be one of {AGGREGATE_SOURCES}, "
                              f"got {self.aggregate_source!r}")
        if any(s < 1 for s in self.downsample):
            raise ConfigError(f"downsample factors must be positive, got {self.downsample}")
        if self.mode == "csca":
            sites = self.fusion_stage_set()
            if L - 1 not in sites:
                raise ConfigError(
                    f"csca mode needs the final stage ({L - 1}) among fusion_stages, "
                    f"got {sorted(sites)}"
                )
            extents = self.stage_extents()
            for l in sorted(sites):
                c, g = self.channels[l], self.group_factors[l]
                h, w = extents[l]
                if c % 2 != 0:
                    raise ConfigError(f"stage {l}: fusion sites need even channels, got {c}")
                if 2 * c % self.reduction != 0:
                    raise ConfigError(f"stage {l}: reduction {self.reduction} "
                                      f"does not divide {2 * c} channels")
                if (h * w) % g != 0:
                    raise ConfigError(
                        f"stage {l}: group factor {g} does not divide {h}x{w}={h * w} positions"
                    )

    def fusion_stage_set(self) -> frozenset[int]:
        """Stage indices that carry an attention + fusion block in csca mode."""
        L = len(self.channels)
        if self.fusion_stages == "last":
            return frozenset({L - 1})
        if self.fusion_stages == "all":
            return frozenset(range(L))
        if isinstance(self.fusion_stages, str):
            raise ConfigError(
                f"fusion_stages must be 'last', 'all', or stage indices, "
                f"got {self.fusion_stages!r}"
            )
        sites = frozenset(int(l) for l in self.fusion_stages)
        bad = [l for l in sites if not 0 <= l < L]
        if bad:
            raise ConfigError(f"fusion_stages {sorted(bad)} out of range for {L} stages")
        return sites

    @property
    def num_stages(self) -> int:
        return len(self.channels)

    def stage_extents(self) -> list[tuple[int, int]]:
        """Feature-map extents after each stage's strided 3x3 convolution."""
        h, w = self.input_extents
        extents = []
        for stride in self.downsample:
            h = (h + 2 - 3) // stride + 1
            w = (w + 2 - 3) // stride + 1
            if h < 1 or w < 1:
                raise ConfigError("downsampling collapses the feature map to nothing")
            extents.append((h, w))
        return extents

    @property
    def output_extents(self) -> tuple[int, int]:
        return self.stage_extents()[-1]

    def attention_config(self, stage: int) -> AttentionConfig:
        return AttentionConfig(group_factor=self.group_factors[stage],
                               partition=self.partition,
                               partition_seed=self.partition_seed,
                               residual=self.residual,
                               scale_logits=self.scale_logits)

    def to_mapping(self) -> dict[str, str]:
        return {
            "in_channels": str(self.in_channels),
            "channels": ",".join(map(str, self.channels)),
            "downsample": ",".join(map(str, self.downsample)),
            "group_factors": ",".join(map(str, self.group_factors)),
            "input_extents": ",".join(map(str, self.input_extents)),
            "mode": self.mode,
            "fusion_stages": (self.fusion_stages if isinstance(self.fusion_stages, str)
                              else ",".join(map(str, self.fusion_stages))),
            "reduction": str(self.reduction),
            "partition": self.partition,
            "partition_seed": str(self.partition_seed),
            "residual": str(int(self.residual)),
            "scale_logits": str(int(self.scale_logits)),
            "aggregate_source": self.aggregate_source,
            "decoder_hidden": str(self.decoder_hidden),
        }

    @classmethod
    def from_mapping(cls, m: dict[str, str]) -> "StageConfig":
        def ints(key):
            return tuple(int(v) for v in m[key].split(","))

        return cls(
            in_channels=int(m["in_channels"]),
            channels=ints("channels"),
            downsample=ints("downsample"),
            group_factors=ints("group_factors"),
            input_extents=ints("input_extents"),  # type: ignore[arg-type]
            mode=m["mode"],
            fusion_stages=(m["fusion_stages"] if m["fusion_stages"] in ("last", "all")
                           else ints("fusion_stages")),
            reduction=int(m["reduction"]),
            partition=m["partition"],
            partition_seed=int(m["partition_seed"]),
            residual=bool(int(m["residual"])),
            scale_logits=bool(int(m["scale_logits"])),
            aggregate_source=m["aggregate_source"],
            decoder_hidden=int(m["decoder_hidden"]),
        )


@dataclass
class ConvStage:
    """3x3 convolution with configurable stride, followed by ReLU."""

    weight: Tensor
    bias: Tensor
    stride: int

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=1))

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}


def _init_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int, dtype) -> Tensor:
    # He-scaled uniform (std sqrt(2/fan_in)): each rectified layer preserves
    # activation variance, so plain gradient descent sees usable gradients
    # even through several stages.
    bound = math.sqrt(6.0 / (c_in * k * k))
    shape = (c_out, c_in, k, k) if k > 1 else (c_out, c_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zero_bias(dim: int, dtype) -> Tensor:
    return Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)


def _build_branch(cfg: StageConfig, in_channels: int, rng, dtype) -> list[ConvStage]:
    stages = []
    c_prev = in_channels
    for c, stride in zip(cfg.channels, cfg.downsample):
        stages.append(ConvStage(weight=_init_conv(rng, c, c_prev, 3, dtype),
                                bias=_zero_bias(c, dtype), stride=stride))
        c_prev = c
    return stages


@dataclass
class Decoder:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def forward(self, x: Tensor) -> Tensor:
        hidden = T.relu(T.conv1x1(x, self.w1, self.b1))
        return T.relu(T.conv1x1(hidden, self.w2, self.b2))

    def parameters(self) -> dict[str, Tensor]:
        return {"dec1_weight": self.w1, "dec1_bias": self.b1,
                "dec2_weight": self.w2, "dec2_bias": self.b2}


@dataclass
class FusionNetwork:
    cfg: StageConfig
    stages_a: list[ConvStage]
    stages_b: list[ConvStage] = field(default_factory=list)
    attn_a: dict[int, ProjectionSet] = field(default_factory=dict)
    attn_b: dict[int, ProjectionSet] = field(default_factory=dict)
    fusion: dict[int, FusionMlp] = field(default_factory=dict)
    decoder: Decoder = None  # type: ignore[assignment]

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for l, stage in enumerate(self.stages_a):
            for name, t in stage.parameters().items():
                params[f"stage{l}_a_{name}"] = t
        for l, stage in enumerate(self.stages_b):
            for name, t in stage.parameters().items():
                params[f"stage{l}_b_{name}"] = t
        for l in sorted(self.attn_a):
            for name, t in self.attn_a[l].parameters().items():
                params[f"attn{l}_a_{name}"] = t
        for l in sorted(self.attn_b):
            for name, t in self.attn_b[l].parameters().items():
                params[f"attn{l}_b_{name}"] = t
        for l in sorted(self.fusion):
            for name, t in self.fusion[l].parameters().items():
                params[f"fuse{l}_{name}"] = t
        params.update(self.decoder.parameters())
        return params

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.grad = None


def build_network(cfg: StageConfig, seed: int, dtype=np.float32) -> FusionNetwork:
    """Deterministic initialization; identical seeds give identical weights."""
    rng = substream(seed, "init")
    single_branch = cfg.mode in ("rgb_only", "aux_only", "early")
    branch_in = 2 * cfg.in_channels if cfg.mode == "early" else cfg.in_channels

    stages_a = _build_branch(cfg, branch_in, rng, dtype)
    stages_b = [] if single_branch else _build_branch(cfg, cfg.in_channels, rng, dtype)

    attn_a: dict[int, ProjectionSet] = {}
    attn_b: dict[int, ProjectionSet] = {}
    fusion: dict[int, FusionMlp] = {}
    if cfg.mode == "csca":
        for l in sorted(cfg.fusion_stage_set()):
            c = cfg.channels[l]
            attn_a[l] = ProjectionSet.initialize(c, rng, dtype=dtype)
            attn_b[l] = ProjectionSet.initialize(c, rng, dtype=dtype)
            fusion[l] = FusionMlp.initialize(c, rng, reduction=cfg.reduction, dtype=dtype)

    dec_in = 2 * cfg.channels[-1] if cfg.mode == "late" else cfg.channels[-1]
    # The head starts small and positive: density targets have mean pixel
    # values near 0.1, and a rectified output whose pre-activation is pushed
    # negative everywhere by one aggressive step stops producing gradients
    # entirely. Damped weights plus a positive bias keep the initial output
    # alive, near the target scale, at every pixel.
    w_head = _init_conv(rng, 1, cfg.decoder_hidden, 1, dtype)
    w_head.data *= 0.1
    decoder = Decoder(w1=_init_conv(rng, cfg.decoder_hidden, dec_in, 1, dtype),
                      b1=Tensor(np.full(cfg.decoder_hidden, 0.01, dtype=dtype),
                                requires_grad=True),
                      w2=w_head,
                      b2=Tensor(np.full(1, 0.3, dtype=dtype), requires_grad=True))
    return FusionNetwork(cfg=cfg, stages_a=stages_a, stages_b=stages_b,
                         attn_a=attn_a, attn_b=attn_b, fusion=fusion, decoder=decoder)


def _check_input(cfg: StageConfig, x: Tensor, name: str) -> None:
    expected = (cfg.in_channels, *cfg.input_extents)
    if x.shape != expected:
        raise ShapeError(f"{name}: expected shape {expected}, got {x.shape}")


def forward(net: FusionNetwork, x_a: Tensor, x_b: Tensor) -> Tensor:
    """Density map (H' x W') for one modality pair; always nonnegative."""
    cfg = net.cfg
    _check_input(cfg, x_a, "forward: modality a")
    _check_input(cfg, x_b, "forward: modality b")

    if cfg.mode == "rgb_only":
        feat = _run_branch(net.stages_a, x_a)
        return _decode(net, feat)
    if cfg.mode == "aux_only":
        feat = _run_branch(net.stages_a, x_b)
        return _decode(net, feat)
    if cfg.mode == "early":
        feat = _run_branch(net.stages_a, T.concat([x_a, x_b], axis=0))
        return _decode(net, feat)
    if cfg.mode == "late":
        feat_a = _run_branch(net.stages_a, x_a)
        feat_b = _run_branch(net.stages_b, x_b)
        return _decode(net, T.concat([feat_a, feat_b], axis=0))

    f_a, f_b = x_a, x_b
    fused = None
    last = cfg.num_stages - 1
    sites = cfg.fusion_stage_set()
    for l in range(cfg.num_stages):
        f_a = net.stages_a[l].forward(f_a)
        f_b = net.stages_b[l].forward(f_b)
        if l not in sites:
            continue
        z_a, z_b, _ = cross_attention_forward(f_a, f_b, net.attn_a[l], net.attn_b[l],
                                              cfg.attention_config(l))
        if cfg.aggregate_source == "attention_output":
            agg_a, agg_b = z_a, z_b
        else:
            agg_a, agg_b = f_a, f_b
        fused, _ = channel_fusion_forward(z_a, z_b, net.fusion[l],
                                          agg_a=agg_a, agg_b=agg_b)
        if l < last:
            f_a = propagate_update(fused, agg_a)
            f_b = propagate_update(fused, agg_b)
    return _decode(net, fused)


def _run_branch(stages: list[ConvStage], x: Tensor) -> Tensor:
    for stage in stages:
        x = stage.forward(x)
    return x


def _decode(net: FusionNetwork, feat: Tensor) -> Tensor:
    out = net.decoder.forward(feat)
    return T.reshape(out, out.shape[1:])


def predict(net: FusionNetwork, mod_a: np.ndarray, mod_b: np.ndarray) -> np.ndarray:
    """Inference on numpy inputs; returns the density map as an array."""
    dtype = net.decoder.w1.dtype
    out = forward(net,
                  Tensor(np.asarray(mod_a, dtype=dtype)),
                  Tensor(np.asarray(mod_b, dtype=dtype)))
    return out.data


def mse_loss(pred: Tensor, gt: Tensor) -> Tensor:
    if pred.shape != gt.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs ground truth {gt.shape}")
    diff = T.sub(pred, gt)
    return T.mean(T.hadamard(diff, diff))


def batch_loss(net: FusionNetwork, batch: list[tuple[Tensor, Tensor, Tensor]]) -> Tensor:
    """Mean per-sample MSE over a batch of (mod_a, mod_b, gt_density) triples."""
    if not batch:
        raise ShapeError("batch_loss: empty batch")
    total = None
    for x_a, x_b, gt in batch:
        loss = mse_loss(forward(net, x_a, x_b), gt)
        total = loss if total is None else T.add(total, loss)
    return T.scale(total, 1.0 / len(batch))


DECAY_START = 30
DECAY_EVERY = 15
DECAY_FACTOR = 0.5


def scheduled_lr(base_lr: float, epoch: int) -> float:
    """Step-decayed rate for a 1-based epoch counter.

    The rate stays at ``base_lr`` for the first 30 epochs — long enough for
    full-batch descent to capture the coarse structure — then halves every
    15 epochs, which suppresses the oscillation that a fixed step develops
    once the loss surface sharpens near a minimum.
    """
    if epoch <= DECAY_START:
        return base_lr
    steps = (epoch - DECAY_START + DECAY_EVERY - 1) // DECAY_EVERY
    return base_lr * DECAY_FACTOR ** steps


def train_step(net: FusionNetwork, batch: list[tuple[Tensor, Tensor, Tensor]],
               lr: float) -> float:
    """One full-batch gradient descent update; returns the pre-update loss."""
    net.zero_grad()
    loss = batch_loss(net, batch)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"training loss is not finite: {value}")
    backward(loss)
    for t in net.parameters().values():
        if t.grad is not None:
            t.data -= (lr * t.grad).astype(t.data.dtype, copy=False)
    return value


def as_batch(samples, dtype=np.float32) -> list[tuple[Tensor, Tensor, Tensor]]:
    """Wrap dataset samples into training triples of the requested dtype."""
    return [(Tensor(np.asarray(s.mod_a, dtype=dtype)),
             Tensor(np.asarray(s.mod_b, dtype=dtype)),
             Tensor(np.asarray(s.gt_density, dtype=dtype)))
            for s in samples]


def save_checkpoint(net: FusionNetwork, directory) -> None:
    """Weight directory (one tensor file per parameter plus manifest) and config."""
    save_weights(directory, {name: t.data for name, t in net.parameters().items()})
    write_config(f"{directory}/config.txt", net.cfg.to_mapping())


def load_checkpoint(directory, dtype=np.float32) -> FusionNetwork:
    cfg = StageConfig.from_mapping(read_config(f"{directory}/config.txt"))
    net = build_network(cfg, seed=0, dtype=dtype)
    arrays = load_weights(directory)
    params = net.parameters()
    missing = set(params) - set(arrays)
    if missing:
        raise ShapeError(f"checkpoint is missing parameters: {sorted(missing)}")
    for name, t in params.items():
        arr = arrays[name].astype(dtype)
        if arr.shape != t.shape:
            raise ShapeError(f"checkpoint parameter {name} has shape {arr.shape}, "
                             f"expected {t.shape}")
        t.data = np.ascontiguousarray(arr)
    return net
