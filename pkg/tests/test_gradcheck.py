"""Gradient-check suites: coverage, determinism, and fault sensitivity."""

import numpy as np
import pytest

from gxattn import gradcheck as G
from gxattn import tensor as T


class TestRunAll:
    def test_everything_passes(self):
        results = G.run_all(seed=0)
        failed = [r for r in results if not r.passed]
        assert not failed, "\n".join(r.line() for r in failed)

    def test_covers_all_suites(self):
        suites = {r.suite for r in G.run_all(seed=0)}
        assert suites == {"ops", "attention", "fusion", "network"}

    def test_every_tensor_op_named(self):
        named = {r.name for r in G.check_ops(seed=0)}
        expected = {"matmul", "softmax", "conv1x1", "conv2d", "add", "sub",
                    "hadamard", "scale", "relu", "mean", "sum", "concat",
                    "narrow", "reshape", "permute", "reorder_rows"}
        assert named == expected

    def test_deterministic_given_seed(self):
        one = [(r.suite, r.name, r.max_rel_error) for r in G.run_all(seed=3)]
        two = [(r.suite, r.name, r.max_rel_error) for r in G.run_all(seed=3)]
        assert one == two

    def test_result_lines_are_single_lines(self):
        for r in G.run_all(seed=0):
            line = r.line()
            assert "\n" not in line and ("PASS" in line or "FAIL" in line)


class TestFaultInjection:
    """A corrupted adjoint must be caught and named by the suite."""

    def test_broken_matmul_adjoint_is_detected(self, monkeypatch):
        def corrupted(g, rhs):
            return 1.01 * (g @ rhs.T)

        monkeypatch.setattr(T, "_matmul_adjoint_lhs", corrupted)
        failed = [r for r in G.run_all(seed=0) if not r.passed]
        assert failed, "suite missed a 1% error in the matmul adjoint"
        assert any(r.name == "matmul" for r in failed)

    def test_broken_rhs_adjoint_is_detected(self, monkeypatch):
        def corrupted(lhs, g):
            out = lhs.T @ g
            out[0] += 0.01
            return out

        monkeypatch.setattr(T, "_matmul_adjoint_rhs", corrupted)
        failed = [r for r in G.run_all(seed=0) if not r.passed]
        assert failed, "suite missed a corrupted matmul right adjoint"


class TestParamCheck:
    def test_param_check_restores_values(self):
        rng = np.random.default_rng(0)
        w = T.Tensor(rng.normal(size=(3, 2)), dtype=np.float64, requires_grad=True)
        x = T.Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        before = w.data.copy()

        report = G.finite_diff_param_check(lambda: T.mean(T.matmul(x, w)), w)
        assert report.passed
        np.testing.assert_array_equal(w.data, before)

    def test_param_check_catches_corrupted_adjoint(self, monkeypatch):
        rng = np.random.default_rng(1)
        w = T.Tensor(rng.normal(size=(3, 2)), dtype=np.float64, requires_grad=True)
        x = T.Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        monkeypatch.setattr(T, "_matmul_adjoint_rhs", lambda lhs, g: 1.05 * (lhs.T @ g))
        report = G.finite_diff_param_check(lambda: T.mean(T.matmul(x, w)), w)
        assert not report.passed


@pytest.mark.parametrize("seed", [0, 1])
def test_network_checks_pass_for_multiple_seeds(seed):
    for r in G.check_network(seed=seed):
        assert r.passed, r.line()
