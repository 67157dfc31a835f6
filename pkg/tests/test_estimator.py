"""Estimator facade: sklearn contract, fit/predict behavior, validation."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gxattn.errors import ContractError, ShapeError
from gxattn.estimator import CrossModalDensityRegressor
from gxattn.validation import check_modal_pair, check_pair_stack, check_seed

FAST = dict(channels=(4,), downsample=(2,), group_factors=(4,),
            epochs=3, lr=0.01, decoder_hidden=4)


def toy_data(n=6, seed=0, extents=(16, 16), channels=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2, channels, *extents)).astype(np.float32)
    y = rng.uniform(0, 0.3, size=(n, extents[0] // 2, extents[1] // 2)).astype(np.float32)
    return X, y


class TestSklearnContract:
    def test_get_params_roundtrip(self):
        est = CrossModalDensityRegressor(mode="late", lr=0.2)
        params = est.get_params()
        assert params["mode"] == "late" and params["lr"] == 0.2
        est2 = CrossModalDensityRegressor(**params)
        assert est2.get_params() == params

    def test_set_params(self):
        est = CrossModalDensityRegressor()
        est.set_params(epochs=5, mode="early")
        assert est.epochs == 5 and est.mode == "early"

    def test_clone(self):
        est = CrossModalDensityRegressor(**FAST)
        dup = clone(est)
        assert dup.get_params() == est.get_params()

    def test_predict_before_fit_raises(self):
        X, _ = toy_data()
        with pytest.raises(NotFittedError):
            CrossModalDensityRegressor().predict(X)

    def test_fit_returns_self(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST)
        assert est.fit(X, y) is est


class TestFitPredict:
    def test_predict_shapes(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST).fit(X, y)
        preds = est.predict(X)
        assert preds.shape == (6, 8, 8)
        assert (preds >= 0).all()
        assert est.transform(X).shape == preds.shape

    def test_predict_count(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST).fit(X, y)
        counts = est.predict_count(X)
        assert counts.shape == (6,)
        np.testing.assert_allclose(counts, est.predict(X).sum(axis=(1, 2)))

    def test_loss_history_recorded(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST).fit(X, y)
        assert len(est.loss_history_) == 3
        assert all(np.isfinite(v) for v in est.loss_history_)

    def test_deterministic_in_seed(self):
        X, y = toy_data()
        one = CrossModalDensityRegressor(seed=3, **FAST).fit(X, y)
        two = CrossModalDensityRegressor(seed=3, **FAST).fit(X, y)
        np.testing.assert_array_equal(one.predict(X), two.predict(X))

    def test_pair_list_input_accepted(self):
        X, y = toy_data()
        pairs = [(X[i, 0], X[i, 1]) for i in range(len(X))]
        est = CrossModalDensityRegressor(**FAST).fit(pairs, list(y))
        assert est.predict(pairs).shape == (6, 8, 8)

    def test_score_is_negative_mae(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST).fit(X, y)
        assert est.score(X, y) <= 0

    def test_wrong_density_resolution_rejected(self):
        X, y = toy_data()
        bad = np.zeros((6, 5, 5), dtype=np.float32)
        with pytest.raises(ValueError, match="emits"):
            CrossModalDensityRegressor(**FAST).fit(X, bad)

    def test_mismatched_prediction_shape_rejected(self):
        X, y = toy_data()
        est = CrossModalDensityRegressor(**FAST).fit(X, y)
        other, _ = toy_data(extents=(8, 8))
        with pytest.raises(ValueError, match="expects"):
            est.predict(other)

    @pytest.mark.parametrize("mode", ["rgb_only", "aux_only", "early", "late"])
    def test_ablation_modes_fit(self, mode):
        X, y = toy_data(n=4)
        est = CrossModalDensityRegressor(mode=mode, **FAST).fit(X, y)
        assert est.predict(X).shape == (4, 8, 8)


class TestValidationHelpers:
    def test_check_modal_pair_shape(self):
        with pytest.raises(ShapeError):
            check_modal_pair(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))

    def test_check_modal_pair_rank(self):
        with pytest.raises(ShapeError):
            check_modal_pair(np.zeros((4, 4)), np.zeros((4, 4)))

    def test_check_modal_pair_nonfinite(self):
        bad = np.full((1, 2, 2), np.nan)
        with pytest.raises(ContractError):
            check_modal_pair(bad, np.zeros((1, 2, 2)))

    def test_check_pair_stack_empty(self):
        with pytest.raises(ContractError):
            check_pair_stack([])

    def test_check_pair_stack_bad_axis(self):
        with pytest.raises(ShapeError):
            check_pair_stack(np.zeros((2, 3, 2, 4, 4)))

    def test_check_pair_stack_inconsistent_samples(self):
        with pytest.raises(ShapeError):
            check_pair_stack([(np.zeros((1, 4, 4)), np.zeros((1, 4, 4))),
                              (np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))])

    def test_check_seed(self):
        assert check_seed(7) == 7
        for bad in (-1, 1.5, "x", True):
            with pytest.raises(ContractError):
                check_seed(bad)
