"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Supported primitives: matrix multiply, add, elementwise multiply, SiLU,
sigmoid, mean-square reductions, dropout (train-mode mask), and RMS
normalization with a learned scale, plus the small set of structural ops
(transpose, reshape, concat, row gather) the networks need. Broadcasting is
restricted to adding/multiplying a row vector (shape ``(d,)`` or ``(1,)``)
against a 2-D operand; general broadcasting is intentionally unsupported.

Every differentiable primitive is exercised by a central finite-difference
check in the test suite.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Shape mismatch in a primitive; the message names the offending op."""


class Tensor:
    """A node in the computation graph: value, gradient, and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def constant(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> str:
    """Classify the allowed shape combinations for add/mul.

    Returns "same", "row" (b is a (d,) row vector against (N, d) a), or
    "scalar" (b has a single element).
    """
    if a.shape == b.shape:
        return "same"
    if b.data.size == 1:
        return "scalar"
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return "row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g)
        if b.requires_grad or b._parents:
            if mode == "same":
                b._accumulate(g)
            elif mode == "row":
                b._accumulate(g.sum(axis=0))
            else:
                b._accumulate(np.full_like(b.data, g.sum()))

    out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * b.data)
        if b.requires_grad or b._parents:
            gb = g * a.data
            if mode == "same":
                b._accumulate(gb)
            elif mode == "row":
                b._accumulate(gb.sum(axis=0))
            else:
                b._accumulate(np.full_like(b.data, gb.sum()))

    out._backward = backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, parents=(a,))

    def backward(g):
        a._accumulate(g * c)

    out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._parents:
            b._accumulate(a.data.T @ g)

    out._backward = backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, parents=(a,))

    def backward(g):
        a._accumulate(g.T)

    out._backward = backward
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    out._backward = backward
    return out


def concat_cols(tensors: list[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_cols: empty input list")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.data.ndim != 2 or t.shape[0] != rows:
            raise ShapeError("concat_cols: all inputs must be 2-D with equal row counts")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), parents=tuple(tensors))
    widths = [t.shape[1] for t in tensors]

    def backward(g):
        start = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad or t._parents:
                t._accumulate(g[:, start:start + w])
            start += w

    out._backward = backward
    return out


def channel_matrix_squares(chans: Tensor, n: int) -> Tensor:
    """Neighborhood aggregation for a stack of pair channels.

    Input columns are flattened n x n matrices; each output column is the
    flattened normalized matrix square M_c @ M_c / n (one batched matmul for
    all channels).
    """
    if chans.data.ndim != 2 or chans.shape[0] != n * n:
        raise ShapeError(f"channel_matrix_squares: expected ({n * n}, c), got {chans.shape}")
    c = chans.shape[1]
    mats = np.ascontiguousarray(chans.data.reshape(n, n, c).transpose(2, 0, 1))
    squares = np.matmul(mats, mats) / n
    out = Tensor(squares.transpose(1, 2, 0).reshape(n * n, c), parents=(chans,))

    def backward(g):
        gm = np.ascontiguousarray(g.reshape(n, n, c).transpose(2, 0, 1)) / n
        mt = mats.transpose(0, 2, 1)
        grad = np.matmul(gm, mt) + np.matmul(mt, gm)
        chans._accumulate(grad.transpose(1, 2, 0).reshape(n * n, c))

    out._backward = backward
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice; backward scatters into the source range."""
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: bad range [{start}, {stop}) for shape {a.shape}")
    out = Tensor(a.data[:, start:stop], parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        a._accumulate(ga)

    out._backward = backward
    return out


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows by index; backward scatter-adds (repeated indices allowed)."""
    if a.data.ndim != 2:
        raise ShapeError("take_rows: input must be 2-D")
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        a._accumulate(ga)

    out._backward = backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_stable(x.data)
    out = Tensor(s, parents=(x,))

    def backward(g):
        x._accumulate(g * s * (1.0 - s))

    out._backward = backward
    return out


def silu(x: Tensor) -> Tensor:
    s = _sigmoid_stable(x.data)
    out = Tensor(x.data * s, parents=(x,))

    def backward(g):
        x._accumulate(g * s * (1.0 + x.data * (1.0 - s)))

    out._backward = backward
    return out


def mean_square(x: Tensor) -> Tensor:
    out = Tensor(np.mean(x.data ** 2), parents=(x,))

    def backward(g):
        x._accumulate((2.0 / x.data.size) * x.data * g)

    out._backward = backward
    return out


def sum_squares(x: Tensor) -> Tensor:
    out = Tensor(np.sum(x.data ** 2), parents=(x,))

    def backward(g):
        x._accumulate(2.0 * x.data * g)

    out._backward = backward
    return out


def masked_mean_square(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of squared entries restricted to a fixed binary mask."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_mean_square: mask shape {mask.shape} != input shape {x.shape}")
    count = mask.sum()
    if count == 0:
        raise ShapeError("masked_mean_square: mask selects no entries")
    out = Tensor(np.sum((x.data * mask) ** 2) / count, parents=(x,))

    def backward(g):
        x._accumulate((2.0 / count) * x.data * mask * g)

    out._backward = backward
    return out


def rms_scale(x: Tensor, gain: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-row RMS normalization with a learned scale: y_i = gain * x_i / rms(x_i)."""
    if x.data.ndim != 2 or gain.data.ndim != 1 or gain.shape[0] != x.shape[1]:
        raise ShapeError(f"rms_scale: incompatible shapes {x.shape} and {gain.shape}")
    d = x.shape[1]
    ms = np.mean(x.data ** 2, axis=1, keepdims=True) + eps
    inv_rms = 1.0 / np.sqrt(ms)
    unit = x.data * inv_rms
    out = Tensor(unit * gain.data, parents=(x, gain))

    def backward(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate(np.sum(g * unit, axis=0))
        if x.requires_grad or x._parents:
            gy = g * gain.data
            dot = np.sum(gy * x.data, axis=1, keepdims=True)
            x._accumulate(gy * inv_rms - x.data * dot * (inv_rms ** 3) / d)

    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when rate == 0 or not training."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ShapeError("dropout: training mode requires an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask, parents=(x,))

    def backward(g):
        x._accumulate(g * mask)

    out._backward = backward
    return out


def _sigmoid_stable(z: np.ndarray) -> np.ndarray:
    # tanh saturates instead of overflowing, so this is stable for all z
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def weighted_logistic_loss(scores: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted binary cross-entropy on logits, normalized by total weight."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    s = scores.data.reshape(-1)
    if s.shape != y.shape or s.shape != w.shape:
        raise ShapeError("weighted_logistic_loss: scores/labels/weights length mismatch")
    wsum = w.sum()
    # log(1 + exp(-|s|)) + max(s, 0) - s*y, the stable form of -log-likelihood
    per = np.log1p(np.exp(-np.abs(s))) + np.maximum(s, 0.0) - s * y
    out = Tensor(np.sum(w * per) / wsum, parents=(scores,))

    def backward(g):
        p = _sigmoid_stable(s)
        scores._accumulate(((w * (p - y)) / wsum * g).reshape(scores.shape))

    out._backward = backward
    return out


def backprop(loss: Tensor) -> float:
    """Reverse traversal from a scalar loss; populates .grad on reachable tensors."""
    if loss.data.shape != ():
        raise ShapeError(f"backprop: loss must be scalar, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return float(loss.data)
