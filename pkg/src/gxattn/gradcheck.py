"""Finite-difference verification suites for every differentiable layer.

All checks run in 64-bit with central differences (step 1e-4) on inputs no
larger than 4 x 8 x 8. Per-operation and per-block checks require 1e-4
relative agreement; the end-to-end network check allows 1e-3 because its
depth compounds rounding. Results come back as a flat list so callers can
print one line per check and exit nonzero on any failure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as N
from . import tensor as T
from .attention import AttentionConfig, ProjectionSet, cross_attention_forward, nonlocal_forward
from .channel_fusion import FusionMlp, channel_fusion_forward, propagate_update
from .tensor import FiniteDiffReport, Tensor, backward, finite_diff_check, relative_errors

OP_TOL = 1e-4
NETWORK_TOL = 1e-3
STEP = 1e-4


@dataclass
class CheckResult:
    suite: str
    name: str
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.suite}/{self.name}: "
                f"max relative error {self.max_rel_error:.3e} (tol {self.tol:.0e})")


def _check(suite: str, name: str, f, x0: np.ndarray, tol: float) -> CheckResult:
    report = finite_diff_check(f, Tensor(x0, dtype=np.float64), step=STEP, tol=tol)
    return CheckResult(suite=suite, name=name, max_rel_error=report.max_rel_error, tol=tol)


def finite_diff_param_check(loss_fn, param: Tensor, step: float = STEP,
                            tol: float = OP_TOL) -> FiniteDiffReport:
    """Central-difference check of d loss / d param for an in-place parameter.

    ``loss_fn`` must rebuild the computation (fresh graph) on every call and
    return a scalar Tensor; the parameter is perturbed in place and restored.
    """
    param.grad = None
    backward(loss_fn())
    analytic = np.zeros(param.shape) if param.grad is None else param.grad.copy()

    numeric = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    numeric_flat = numeric.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        hi = loss_fn().item()
        flat[i] = original - step
        lo = loss_fn().item()
        flat[i] = original
        numeric_flat[i] = (hi - lo) / (2.0 * step)

    errors = relative_errors(analytic, numeric)
    worst = tuple(int(i) for i in np.unravel_index(np.argmax(errors), errors.shape))
    return FiniteDiffReport(max_rel_error=float(errors.max()), tol=tol,
                            worst_index=worst, analytic=analytic, numeric=numeric)


def check_ops(seed: int = 0) -> list[CheckResult]:
    """One finite-difference check per differentiable tensor operation."""
    rng = np.random.default_rng(seed)
    w_mat = Tensor(rng.normal(size=(8, 4)), dtype=np.float64)
    w_1x1 = Tensor(rng.normal(size=(3, 4)), dtype=np.float64)
    b_1x1 = Tensor(rng.normal(size=3), dtype=np.float64)
    w_3x3 = Tensor(rng.normal(size=(3, 4, 3, 3)), dtype=np.float64)
    other = Tensor(rng.normal(size=(4, 8, 8)), dtype=np.float64)
    order = rng.permutation(8)

    cases = [
        ("matmul", lambda x: T.mean(T.matmul(x, w_mat)), rng.normal(size=(4, 8))),
        ("softmax", lambda x: T.mean(T.hadamard(T.softmax(x, axis=1), x)),
         rng.normal(size=(4, 8))),
        ("conv1x1", lambda x: T.mean(T.conv1x1(x, w_1x1, b_1x1)),
         rng.normal(size=(4, 8, 8))),
        ("conv2d", lambda x: T.mean(T.conv2d(x, w_3x3, b_1x1, stride=2, padding=1)),
         rng.normal(size=(4, 8, 8))),
        ("add", lambda x: T.mean(T.hadamard(T.add(x, other), T.add(x, other))),
         rng.normal(size=(4, 8, 8))),
        ("sub", lambda x: T.mean(T.hadamard(T.sub(x, other), T.sub(x, other))),
         rng.normal(size=(4, 8, 8))),
        ("hadamard", lambda x: T.mean(T.hadamard(x, T.hadamard(x, other))),
         rng.normal(size=(4, 8, 8))),
        ("scale", lambda x: T.mean(T.hadamard(T.scale(x, -1.75), x)),
         rng.normal(size=(4, 8, 8))),
        ("relu", lambda x: T.mean(T.hadamard(T.relu(x), x)), rng.normal(size=(4, 8, 8))),
        ("mean", lambda x: T.hadamard(T.mean(x), T.mean(x)), rng.normal(size=(4, 8))),
        ("sum", lambda x: T.hadamard(T.sum_all(x), T.mean(x)), rng.normal(size=(4, 4))),
        ("concat", lambda x: T.mean(T.hadamard(T.concat([x, x], axis=0),
                                               T.concat([other, x], axis=0))),
         rng.normal(size=(4, 8, 8))),
        ("narrow", lambda x: T.mean(T.hadamard(T.narrow(x, 1, 2, 4), T.narrow(x, 1, 0, 4))),
         rng.normal(size=(4, 8, 8))),
        ("reshape", lambda x: T.mean(T.hadamard(T.reshape(x, (8, 32)),
                                                T.reshape(x, (8, 32)))),
         rng.normal(size=(4, 8, 8))),
        ("permute", lambda x: T.mean(T.hadamard(T.permute(x, (2, 0, 1)),
                                                T.permute(x, (2, 0, 1)))),
         rng.normal(size=(4, 8, 8))),
        ("reorder_rows", lambda x: T.mean(T.hadamard(T.reorder_rows(x, order), x)),
         rng.normal(size=(8, 4))),
    ]
    return [_check("ops", name, f, x0, OP_TOL) for name, f, x0 in cases]


def check_attention(seed: int = 0) -> list[CheckResult]:
    """Gradient checks through both attention blocks and the re-assembly."""
    rng = np.random.default_rng(seed)
    proj_a = ProjectionSet.initialize(4, np.random.default_rng(seed + 1), dtype=np.float64)
    proj_b = ProjectionSet.initialize(4, np.random.default_rng(seed + 2), dtype=np.float64)
    x_b = Tensor(rng.normal(size=(4, 4, 4)), dtype=np.float64)

    def nonlocal_case(x):
        out, _ = nonlocal_forward(x, proj_a)
        return T.mean(T.hadamard(out, out))

    def cross_case(cfg):
        def f(x):
            z_a, z_b, _ = cross_attention_forward(x, x_b, proj_a, proj_b, cfg)
            return T.mean(T.add(T.hadamard(z_a, z_a), z_b))

        return f

    contiguous = AttentionConfig(group_factor=4)
    shuffled = AttentionConfig(group_factor=4, partition="seeded_random", partition_seed=5)
    unscaled = AttentionConfig(group_factor=2, scale_logits=False, residual=False)
    x0 = rng.normal(size=(4, 4, 4))
    return [
        _check("attention", "nonlocal", nonlocal_case, x0, OP_TOL),
        _check("attention", "cross_contiguous", cross_case(contiguous), x0, OP_TOL),
        _check("attention", "cross_shuffled", cross_case(shuffled), x0, OP_TOL),
        _check("attention", "cross_unscaled_noresidual", cross_case(unscaled), x0, OP_TOL),
    ]


def check_fusion(seed: int = 0) -> list[CheckResult]:
    """Gradient checks through channel fusion and the composed attention stack."""
    rng = np.random.default_rng(seed)
    mlp = FusionMlp.initialize(4, np.random.default_rng(seed + 1), dtype=np.float64)
    z_b = Tensor(rng.normal(size=(4, 4, 4)), dtype=np.float64)

    def fusion_case(x):
        fused, pair = channel_fusion_forward(x, z_b, mlp)
        return T.mean(T.add(fused, T.hadamard(pair.w_a, pair.w_b)))

    def propagate_case(x):
        return T.mean(T.hadamard(propagate_update(x, z_b), x))

    proj_a = ProjectionSet.initialize(2, np.random.default_rng(seed + 3), dtype=np.float64)
    proj_b = ProjectionSet.initialize(2, np.random.default_rng(seed + 4), dtype=np.float64)
    stack_mlp = FusionMlp.initialize(2, np.random.default_rng(seed + 5),
                                     reduction=2, dtype=np.float64)
    stack_b = Tensor(rng.normal(size=(2, 4, 4)), dtype=np.float64)

    def stacked_case(x):
        z_a, z_bb, _ = cross_attention_forward(x, stack_b, proj_a, proj_b,
                                               AttentionConfig(group_factor=4))
        fused, _ = channel_fusion_forward(z_a, z_bb, stack_mlp)
        return T.mean(T.hadamard(fused, fused))

    return [
        _check("fusion", "channel_fusion", fusion_case, rng.normal(size=(4, 4, 4)), OP_TOL),
        _check("fusion", "propagate_update", propagate_case, rng.normal(size=(4, 4, 4)), OP_TOL),
        _check("fusion", "attention_plus_fusion", stacked_case,
               rng.normal(size=(2, 4, 4)), OP_TOL),
    ]


def check_network(seed: int = 0) -> list[CheckResult]:
    """End-to-end input and parameter gradients of a small fusion network."""
    cfg = N.StageConfig(in_channels=2, channels=(4, 4), downsample=(2, 1),
                        group_factors=(2, 2), input_extents=(8, 8),
                        fusion_stages="all")
    net = N.build_network(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x_a = Tensor(rng.normal(size=(2, 8, 8)), dtype=np.float64)
    x_b = Tensor(rng.normal(size=(2, 8, 8)), dtype=np.float64)
    gt = Tensor(rng.uniform(0, 0.5, size=cfg.output_extents), dtype=np.float64)

    def input_case(x):
        return N.mse_loss(N.forward(net, x, x_b), gt)

    input_result = _check("network", "input_gradient", input_case, x_a.data.copy(),
                          NETWORK_TOL)

    def loss_fn():
        net.zero_grad()
        return N.mse_loss(N.forward(net, x_a, x_b), gt)

    decoder_report = finite_diff_param_check(loss_fn, net.decoder.w1, tol=NETWORK_TOL)
    stage_report = finite_diff_param_check(loss_fn, net.stages_a[0].bias, tol=NETWORK_TOL)
    return [
        input_result,
        CheckResult("network", "decoder_weight_gradient",
                    decoder_report.max_rel_error, NETWORK_TOL),
        CheckResult("network", "first_stage_bias_gradient",
                    stage_report.max_rel_error, NETWORK_TOL),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    return (check_ops(seed) + check_attention(seed) + check_fusion(seed)
            + check_network(seed))
