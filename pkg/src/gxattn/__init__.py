"""Grouped cross-modal attention with channel fusion, plus the toy pipeline around it.

Layers, bottom-up:

* :mod:`gxattn.tensor` — minimal reverse-mode autodiff over numpy arrays.
* :mod:`gxattn.attention` — non-local self-attention baseline and grouped
  cross-modal attention with exact multiply-accumulate ledgers.
* :mod:`gxattn.channel_fusion` — per-channel convex weighting of two streams.
* :mod:`gxattn.network` — two-branch density network with configurable
  fusion placement, training loop, and checkpoints.
* :mod:`gxattn.estimator` — sklearn-style ``fit``/``predict`` facade.
* :mod:`gxattn.metrics` / :mod:`gxattn.synthdata` — counting metrics and the
  synthetic two-modality dataset.
* :mod:`gxattn.bench` / :mod:`gxattn.gradcheck` — benchmark and
  finite-difference verification harnesses, also reachable via the
  ``gxattn`` command line.
"""

from .attention import (AttentionConfig, FlopLedger, ProjectionSet,
                        cross_attention_forward, nonlocal_forward)
from .channel_fusion import FusionMlp, channel_fusion_forward, propagate_update
from .errors import (ConfigError, ContractError, FileFormatError,
                     NumericError, ShapeError)
from .estimator import CrossModalDensityRegressor
from .metrics import game, mae, rmse
from .network import FusionNetwork, StageConfig, build_network, forward, predict, train_step
from .synthdata import load_dataset, make_dataset
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "FlopLedger", "ProjectionSet",
    "cross_attention_forward", "nonlocal_forward",
    "FusionMlp", "channel_fusion_forward", "propagate_update",
    "ConfigError", "ContractError", "FileFormatError", "NumericError", "ShapeError",
    "CrossModalDensityRegressor",
    "game", "mae", "rmse",
    "FusionNetwork", "StageConfig", "build_network", "forward", "predict", "train_step",
    "load_dataset", "make_dataset",
    "Tensor", "backward",
    "__version__",
]
