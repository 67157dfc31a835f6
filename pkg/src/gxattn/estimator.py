"""Scikit-learn style facade over the two-branch density network.

``CrossModalDensityRegressor`` wraps dataset wrangling, network construction
and full-batch training behind the familiar ``fit`` / ``predict`` /
``score`` surface so the model drops into sklearn tooling (``clone``,
``get_params``, grid search). The functional API in :mod:`gxattn.network`
remains the primitive layer; the estimator adds input validation and state
handling only.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import network as N
from .metrics import mae
from .tensor import Tensor
from .validation import check_density_stack, check_pair_stack, check_seed


class CrossModalDensityRegressor(BaseEstimator, RegressorMixin):
    """Density-map regressor over registered two-modality inputs.

    X is either an (n, 2, C, H, W) array (modalities stacked on axis 1) or a
    sequence of (mod_a, mod_b) pairs; y is a matching stack of 2-D density
    maps at the network's output resolution. ``predict`` returns density
    maps; ``predict_count`` sums them; ``score`` returns the negative mean
    absolute count error, so larger is better.
    """

    def __init__(self, channels=(8, 16), downsample=(2, 2), group_factors=(4, 4),
                 mode="csca", reduction=4, partition="contiguous", partition_seed=0,
                 residual=True, scale_logits=True, aggregate_source="attention_output",
                 fusion_stages="last", decoder_hidden=8, epochs=30, lr=0.05, seed=0):
        self.channels = channels
        self.downsample = downsample
        self.group_factors = group_factors
        self.mode = mode
        self.reduction = reduction
        self.partition = partition
        self.partition_seed = partition_seed
        self.residual = residual
        self.scale_logits = scale_logits
        self.aggregate_source = aggregate_source
        self.fusion_stages = fusion_stages
        self.decoder_hidden = decoder_hidden
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    def _config_for(self, pairs) -> N.StageConfig:
        c, h, w = pairs[0][0].shape
        return N.StageConfig(
            in_channels=c,
            channels=tuple(self.channels),
            downsample=tuple(self.downsample),
            group_factors=tuple(self.group_factors),
            input_extents=(h, w),
            mode=self.mode,
            reduction=self.reduction,
            partition=self.partition,
            partition_seed=self.partition_seed,
            residual=self.residual,
            scale_logits=self.scale_logits,
            aggregate_source=self.aggregate_source,
            fusion_stages=self.fusion_stages if isinstance(self.fusion_stages, str)
            else tuple(self.fusion_stages),
            decoder_hidden=self.decoder_hidden,
        )

    def fit(self, X, y):
        pairs = check_pair_stack(X)
        maps = check_density_stack(y, len(pairs))
        seed = check_seed(self.seed)
        cfg = self._config_for(pairs)
        if maps[0].shape != cfg.output_extents:
            raise ValueError(
                f"density maps have shape {maps[0].shape}, the configured network "
                f"emits {cfg.output_extents}"
            )
        net = N.build_network(cfg, seed=seed)
        batch = [(Tensor(a), Tensor(b), Tensor(m)) for (a, b), m in zip(pairs, maps)]
        history = [N.train_step(net, batch, lr=N.scheduled_lr(self.lr, epoch))
                   for epoch in range(1, self.epochs + 1)]

        self.net_ = net
        self.config_ = cfg
        self.loss_history_ = history
        self.n_features_in_ = int(np.prod(pairs[0][0].shape)) * 2
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this CrossModalDensityRegressor is not fitted yet; call fit first"
            )

    def predict(self, X) -> np.ndarray:
        """Density maps, shape (n, H', W')."""
        self._require_fitted()
        pairs = check_pair_stack(X)
        expected = (self.config_.in_channels, *self.config_.input_extents)
        if pairs[0][0].shape != expected:
            raise ValueError(f"samples have shape {pairs[0][0].shape}, "
                             f"the fitted network expects {expected}")
        return np.stack([N.predict(self.net_, a, b) for a, b in pairs])

    def transform(self, X) -> np.ndarray:
        """Alias of :meth:`predict`; the density map is the learned representation."""
        return self.predict(X)

    def predict_count(self, X) -> np.ndarray:
        """Predicted object counts, shape (n,)."""
        return self.predict(X).sum(axis=(1, 2))

    def score(self, X, y) -> float:
        """Negative mean absolute count error (higher is better)."""
        preds = self.predict(X)
        maps = check_density_stack(y, len(preds))
        return -mae(list(preds), maps)
