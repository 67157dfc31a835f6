"""Minimal dense tensor type with reverse-mode differentiation.

Values live in row-major numpy arrays of float32 or float64 (float32 for
benchmarks and training, float64 for gradient verification). There is no
broadcasting anywhere: operand shapes must match exactly, except for the
joined axis of ``concat``. Every operation materializes its output (permute
included, no strided views) and, when any input tracks gradients, records an
adjoint closure on the result. ``backward`` collects the closures reachable
from a scalar output into a :class:`GradTape` and replays them in reverse
execution order.

The matmul kernel delegates to BLAS, which may parallelize across output
rows; each output element is reduced sequentially, so results do not depend
on the parallelism degree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_execution_counter = itertools.count()


def _as_array(data, dtype) -> np.ndarray:
    if dtype is not None:
        arr = np.asarray(data, dtype=dtype)
    else:
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
    return np.ascontiguousarray(arr)


class Tensor:
    """Dense n-dimensional float array with optional gradient tracking.

    Tensors are immutable after construction except through recorded
    operations; sharing a tensor across threads for reading is safe, while a
    gradient tape must stay confined to the thread that built it.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_adjoint", "_op", "_seq")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        if self.data.dtype not in FLOAT_DTYPES:
            raise ContractError(f"only float32/float64 tensors are supported, got {self.data.dtype}")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._adjoint: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"
        self._seq = next(_execution_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    # operator sugar; scalars go through scale(), tensors through the
    # exact-shape elementwise ops
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def permute(self, axes) -> "Tensor":
        return permute(self, axes)

    def relu(self) -> "Tensor":
        return relu(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def sum(self) -> "Tensor":
        return sum_all(self)


def _record(data: np.ndarray, op: str, parents: tuple[Tensor, ...], adjoint) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    out._op = op
    if out.requires_grad:
        out._parents = parents
        out._adjoint = adjoint
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} must match exactly")
    if a.dtype != b.dtype:
        raise ContractError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


def _check_axis(op: str, axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for a rank-{ndim} tensor")
    return axis % ndim


# --- arithmetic ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def adjoint(g):
        return g, g

    return _record(a.data + b.data, "add", (a, b), adjoint)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def adjoint(g):
        return g, -g

    return _record(a.data - b.data, "sub", (a, b), adjoint)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("hadamard", a, b)

    def adjoint(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _record(a.data * b.data, "hadamard", (a, b), adjoint)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def adjoint(g):
        return (g * factor,)

    return _record(x.data * x.data.dtype.type(factor), "scale", (x,), adjoint)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def adjoint(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, x.data.dtype.type(0)), "relu", (x,), adjoint)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def adjoint(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _record(np.asarray(x.data.mean(), dtype=x.dtype), "mean", (x,), adjoint)


def sum_all(x: Tensor) -> Tensor:
    def adjoint(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _record(np.asarray(x.data.sum(), dtype=x.dtype), "sum", (x,), adjoint)


# --- shape movement --------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape

    def adjoint(g):
        return (g.reshape(old),)

    return _record(x.data.reshape(shape), "reshape", (x,), adjoint)


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of the {x.ndim} axes")
    inverse = tuple(int(i) for i in np.argsort(axes))

    def adjoint(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record(np.ascontiguousarray(x.data.transpose(axes)), "permute", (x,), adjoint)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if len(tensors) < 2:
        raise ContractError("concat needs at least two tensors")
    first = tensors[0]
    axis = _check_axis("concat", axis, first.ndim)
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            i != axis and t.shape[i] != first.shape[i] for i in range(first.ndim)
        ):
            raise ShapeError(
                f"concat: shapes {[t.shape for t in tensors]} differ outside axis {axis}"
            )
        if t.dtype != first.dtype:
            raise ContractError("concat: mixed dtypes")
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def adjoint(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return _record(np.concatenate([t.data for t in tensors], axis=axis),
                   "concat", tuple(tensors), adjoint)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    axis = _check_axis("narrow", axis, x.ndim)
    if not (0 <= start and start + length <= x.shape[axis] and length > 0):
        raise ShapeError(
            f"narrow: slice [{start}:{start + length}) outside extent {x.shape[axis]} on axis {axis}"
        )
    index = tuple(slice(None) if i != axis else slice(start, start + length)
                  for i in range(x.ndim))

    def adjoint(g):
        full = np.zeros(x.shape, dtype=x.dtype)
        full[index] = g
        return (full,)

    return _record(np.ascontiguousarray(x.data[index]), "narrow", (x,), adjoint)


def reorder_rows(x: Tensor, order: np.ndarray) -> Tensor:
    """Permute axis-0 entries: out[i] = x[order[i]] for a permutation ``order``."""
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (x.shape[0],):
        raise ShapeError(f"reorder_rows: order length {order.shape} does not match extent {x.shape[0]}")
    inverse = np.argsort(order)

    def adjoint(g):
        return (np.ascontiguousarray(g[inverse]),)

    return _record(np.ascontiguousarray(x.data[order]), "reorder_rows", (x,), adjoint)


# --- linear algebra --------------------------------------------------------

def _matmul_adjoint_lhs(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return g @ rhs.T


def _matmul_adjoint_rhs(lhs: np.ndarray, g: np.ndarray) -> np.ndarray:
    return lhs.T @ g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree for {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise ContractError(f"matmul: mixed dtypes {a.dtype} and {b.dtype}")

    def adjoint(g):
        return (_matmul_adjoint_lhs(g, b.data) if a.requires_grad else None,
                _matmul_adjoint_rhs(a.data, g) if b.requires_grad else None)

    return _record(a.data @ b.data, "matmul", (a, b), adjoint)


def softmax(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis("softmax", axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _record(out, "softmax", (x,), adjoint)


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel linear map over channels: x is C_in x H x W, weight C_out x C_in."""
    if x.ndim != 3 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(
            f"conv1x1: expected ranks (3, 2, 1), got {x.shape}, {weight.shape}, {bias.shape}"
        )
    c_out, c_in = weight.shape
    if x.shape[0] != c_in or bias.shape[0] != c_out:
        raise ShapeError(
            f"conv1x1: channel extents disagree, x={x.shape}, weight={weight.shape}, bias={bias.shape}"
        )

    def adjoint(g):
        gx = np.tensordot(weight.data.T, g, axes=([1], [0])) if x.requires_grad else None
        gw = np.tensordot(g, x.data, axes=([1, 2], [1, 2])) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias.requires_grad else None
        return gx, gw, gb

    out = np.tensordot(weight.data, x.data, axes=([1], [0])) + bias.data[:, None, None]
    return _record(out, "conv1x1", (x, weight, bias), adjoint)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """2-D cross-correlation of a C_in x H x W map with C_out x C_in x kh x kw filters."""
    if x.ndim != 3 or weight.ndim != 4 or bias.ndim != 1:
        raise ShapeError(
            f"conv2d: expected ranks (3, 4, 1), got {x.shape}, {weight.shape}, {bias.shape}"
        )
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in or bias.shape[0] != c_out:
        raise ShapeError(
            f"conv2d: channel extents disagree, x={x.shape}, weight={weight.shape}, bias={bias.shape}"
        )
    _, h, w = x.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit a {h}x{w} map with padding {padding}")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]               # C_in, H_out, W_out, kh, kw
    cols = np.ascontiguousarray(windows.transpose(1, 2, 0, 3, 4)).reshape(
        h_out * w_out, c_in * kh * kw
    )
    w_mat = weight.data.reshape(c_out, c_in * kh * kw)
    out = (cols @ w_mat.T + bias.data).T.reshape(c_out, h_out, w_out)

    def adjoint(g):
        g_mat = g.reshape(c_out, h_out * w_out).T
        gw = (g_mat.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g_mat @ w_mat).reshape(h_out, w_out, c_in, kh, kw)
            dpadded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    dpadded[:, i:i + h_out * stride:stride, j:j + w_out * stride:stride] += (
                        dcols[:, :, :, i, j].transpose(2, 0, 1)
                    )
            gx = dpadded[:, padding:padding + h, padding:padding + w]
            gx = np.ascontiguousarray(gx)
        return gx, gw, gb

    return _record(np.ascontiguousarray(out), "conv2d", (x, weight, bias), adjoint)


# --- reverse-mode replay ----------------------------------------------------

class GradTape:
    """Ordered record of the recorded operations behind one output tensor.

    ``nodes`` holds the op-result tensors in forward execution order;
    replaying visits each exactly once, in reverse.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "GradTape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [output]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            if t._adjoint is not None:
                nodes.append(t)
                stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def replay(self) -> None:
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            grads = node._adjoint(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor the scalar loss depends on."""
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones(loss.shape, dtype=loss.dtype)
    GradTape.from_output(loss).replay()


# --- gradient verification ---------------------------------------------------

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    tol: float
    worst_index: tuple[int, ...]
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|analytic - numeric| / max(1, |analytic|), elementwise."""
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def finite_diff_check(f, x: Tensor, step: float = 1e-4, tol: float = 1e-4) -> FiniteDiffReport:
    """Compare the recorded gradient of a scalar-valued ``f`` against central differences.

    ``f`` receives a fresh requires_grad copy of ``x``; the numeric side
    evaluates ``f`` at per-coordinate perturbations without gradient tracking.
    """
    leaf = Tensor(x.data.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ContractError("finite_diff_check: f must be scalar-valued")
    if not np.isfinite(out.data).all():
        raise NumericError("finite_diff_check: non-finite value at the base point")
    backward(out)
    analytic = (np.zeros(leaf.shape, dtype=leaf.dtype) if leaf.grad is None
                else leaf.grad.copy())

    def value_at(arr: np.ndarray) -> float:
        v = f(Tensor(arr, requires_grad=False)).data
        if not np.isfinite(v).all():
            raise NumericError("finite_diff_check: non-finite value at a perturbed point")
        return float(v.reshape(-1)[0])

    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        hi = value_at(bumped.reshape(x.shape))
        bumped[i] = flat[i] - step
        lo = value_at(bumped.reshape(x.shape))
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * step)

    errors = relative_errors(analytic, numeric)
    if errors.size == 0:
        worst = ()
        max_err = 0.0
    else:
        worst = tuple(int(i) for i in np.unravel_index(np.argmax(errors), errors.shape))
        max_err = float(errors.max())
    return FiniteDiffReport(max_rel_error=max_err, tol=tol, worst_index=worst,
                            analytic=analytic, numeric=numeric)
