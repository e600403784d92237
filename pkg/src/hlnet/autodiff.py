"""Reverse-mode automatic differentiation over dense float64 matrices.

A ``Mat`` wraps a 2-d float64 array. Operations are plain functions; while a
``Tape`` is active (as a context manager) every operation touching a tracked
value records a backward rule on it. ``Tape.backward`` replays the records in
reverse, accumulating gradients into the ``grad`` buffers of the leaves.

Tapes are rebuilt per forward pass and are thread-local: matrices are treated
as immutable once produced, so distinct tapes may run on distinct threads.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Mat",
    "ShapeError",
    "Tape",
    "add",
    "add_bias",
    "add_const",
    "causal_conv1d",
    "clamp",
    "concat_cols",
    "constant",
    "dropout",
    "exp",
    "log",
    "matmul",
    "mul",
    "parameter",
    "relu",
    "row_softmax",
    "row_softmax_np",
    "row_sums",
    "scale",
    "sigmoid",
    "sigmoid_np",
    "sub",
    "sum_all",
    "topk_indices",
    "topk_mean",
    "unary",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Mat:
    """A rows x cols matrix of float64 values, optionally gradient-tracked."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-d matrix, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[:] = 0.0

    def __repr__(self) -> str:
        return f"Mat(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Mat:
    """A leaf value that accumulates gradients across backward passes."""
    return Mat(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Mat:
    """A value gradients never flow into."""
    return Mat(data)


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations for one forward pass.

    Recording order is a valid topological order by construction: an
    operation's inputs always exist before its output is recorded.
    """

    def __init__(self):
        self._nodes: list[tuple[Mat, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a non-innermost tape")
        stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Mat, backward: Callable[[np.ndarray], None]) -> None:
        self._nodes.append((out, backward))

    def backward(self, loss: Mat) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Leaves not reachable from the loss are left untouched (their grad
        buffers stay zero). The loss must be a 1x1 matrix.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones((1, 1))
        for out, backward in reversed(self._nodes):
            if out.grad is None:
                continue  # no path from this node to the loss
            backward(out.grad)


def _accum(m: Mat, delta: np.ndarray) -> None:
    if m.grad is None:
        m.grad = np.array(delta, dtype=np.float64)
    else:
        m.grad += delta


def _track(out: Mat, inputs: Sequence[Mat], backward: Callable[[np.ndarray], None]) -> Mat:
    tape = _active_tape()
    if tape is not None and any(m.requires_grad for m in inputs):
        out.requires_grad = True
        out.grad = None  # intermediate: allocated lazily during backward
        tape._record(out, backward)
    return out


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Mat, b: Mat) -> Mat:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    out = Mat(a.data @ b.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _track(out, (a, b), backward)


def add(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = Mat(a.data + b.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _track(out, (a, b), backward)


def sub(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ, {a.shape} vs {b.shape}")
    out = Mat(a.data - b.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _track(out, (a, b), backward)


def mul(a: Mat, b: Mat) -> Mat:
    """Elementwise (Hadamard) product."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
    out = Mat(a.data * b.data)

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _track(out, (a, b), backward)


def add_bias(x: Mat, b: Mat) -> Mat:
    """Add a 1 x cols row vector to every row of x."""
    if b.rows != 1 or b.cols != x.cols:
        raise ShapeError(f"add_bias: bias {b.shape} does not fit matrix {x.shape}")
    out = Mat(x.data + b.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g)
        if b.requires_grad:
            _accum(b, g.sum(axis=0, keepdims=True))

    return _track(out, (x, b), backward)


def scale(x: Mat, c: float) -> Mat:
    c = float(c)
    out = Mat(x.data * c)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * c)

    return _track(out, (x,), backward)


def add_const(x: Mat, c: float) -> Mat:
    out = Mat(x.data + float(c))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g)

    return _track(out, (x,), backward)


def relu(x: Mat) -> Mat:
    out = Mat(np.maximum(x.data, 0.0))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * (x.data > 0.0))

    return _track(out, (x,), backward)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Numerically safe logistic on a plain array."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Mat) -> Mat:
    s = sigmoid_np(x.data)
    out = Mat(s)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * s * (1.0 - s))

    return _track(out, (x,), backward)


def exp(x: Mat) -> Mat:
    e = np.exp(x.data)
    out = Mat(e)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * e)

    return _track(out, (x,), backward)


def log(x: Mat) -> Mat:
    out = Mat(np.log(x.data))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g / x.data)

    return _track(out, (x,), backward)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "exp": exp}


def unary(x: Mat, kind: str) -> Mat:
    """Elementwise activation by name: relu, sigmoid, or exp."""
    try:
        fn = _UNARY[kind]
    except KeyError:
        raise ValueError(f"unknown unary kind {kind!r}, expected one of {sorted(_UNARY)}") from None
    return fn(x)


def clamp(x: Mat, lo: float, hi: float) -> Mat:
    """Clip to [lo, hi]; gradient passes only through the interior."""
    out = Mat(np.clip(x.data, lo, hi))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * ((x.data > lo) & (x.data < hi)))

    return _track(out, (x,), backward)


def row_softmax_np(x: np.ndarray) -> np.ndarray:
    """Per-row softmax with max subtraction, on a plain array."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(x: Mat) -> Mat:
    s = row_softmax_np(x.data)
    out = Mat(s)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            dot = (g * s).sum(axis=1, keepdims=True)
            _accum(x, s * (g - dot))

    return _track(out, (x,), backward)


def dropout(x: Mat, rate: float, training: bool, rng: np.random.Generator) -> Mat:
    """Inverted dropout: zero entries with probability ``rate`` and scale
    survivors by 1/(1-rate) so evaluation mode is an exact identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    factor = keep / (1.0 - rate)
    out = Mat(x.data * factor)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * factor)

    return _track(out, (x,), backward)


def concat_cols(parts: Sequence[Mat]) -> Mat:
    if not parts:
        raise ShapeError("concat_cols: need at least one part")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(f"concat_cols: row counts differ ({[p.shape for p in parts]})")
    out = Mat(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + [p.cols for p in parts])

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, g[:, lo:hi])

    return _track(out, tuple(parts), backward)


def row_sums(x: Mat) -> Mat:
    """Collapse each row to its sum: rows x cols -> rows x 1."""
    out = Mat(x.data.sum(axis=1, keepdims=True))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, np.repeat(g, x.cols, axis=1))

    return _track(out, (x,), backward)


def sum_all(x: Mat) -> Mat:
    out = Mat([[x.data.sum()]])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, np.full(x.shape, g[0, 0]))

    return _track(out, (x,), backward)


def causal_conv1d(x: Mat, kernel: Mat, bias: Mat) -> Mat:
    """Causal temporal convolution of a scalar sequence.

    ``x`` is T' x 1. With K taps, y[t] = bias + sum_k kernel[k] * x[t-(K-1)+k]
    where x[j] = 0 for j < 0: left zero padding only, so y[t] never reads
    positions after t.
    """
    if x.cols != 1:
        raise ShapeError(f"causal_conv1d: input must be a column vector, got {x.shape}")
    if kernel.cols != 1:
        raise ShapeError(f"causal_conv1d: kernel must be a column vector, got {kernel.shape}")
    if bias.shape != (1, 1):
        raise ShapeError(f"causal_conv1d: bias must be 1x1, got {bias.shape}")
    t = x.rows
    k_taps = kernel.rows
    xv = x.data[:, 0]
    kv = kernel.data[:, 0]
    y = np.full(t, bias.data[0, 0])
    for k in range(k_taps):
        shift = k_taps - 1 - k
        if shift == 0:
            y += kv[k] * xv
        elif shift < t:
            y[shift:] += kv[k] * xv[: t - shift]
    out = Mat(y.reshape(-1, 1))

    def backward(g: np.ndarray) -> None:
        gv = g[:, 0]
        if kernel.requires_grad:
            dk = np.zeros((k_taps, 1))
            for k in range(k_taps):
                shift = k_taps - 1 - k
                if shift == 0:
                    dk[k, 0] = gv @ xv
                elif shift < t:
                    dk[k, 0] = gv[shift:] @ xv[: t - shift]
            _accum(kernel, dk)
        if bias.requires_grad:
            _accum(bias, np.array([[gv.sum()]]))
        if x.requires_grad:
            dx = np.zeros(t)
            for k in range(k_taps):
                shift = k_taps - 1 - k
                if shift == 0:
                    dx += kv[k] * gv
                elif shift < t:
                    dx[: t - shift] += kv[k] * gv[shift:]
            _accum(x, dx.reshape(-1, 1))

    return _track(out, (x, kernel, bias), backward)


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries; ties at the cut go to lower indices."""
    return np.argsort(-values, kind="stable")[:k]


def topk_mean(x: Mat, k: int) -> Mat:
    """Mean of the k largest entries of a column vector."""
    if x.cols != 1:
        raise ShapeError(f"topk_mean: input must be a column vector, got {x.shape}")
    t = x.rows
    if not 1 <= k <= t:
        raise ValueError(f"topk_mean: k={k} out of range [1, {t}]")
    chosen = topk_indices(x.data[:, 0], k)
    out = Mat([[x.data[chosen, 0].mean()]])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            dx = np.zeros((t, 1))
            dx[chosen, 0] = g[0, 0] / k
            _accum(x, dx)

    return _track(out, (x,), backward)
