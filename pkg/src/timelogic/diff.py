"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Only the primitives the model actually uses are provided, each with an
explicit adjoint.  Recording is tape-based: ops executed inside a
`with Tape() as t:` block append nodes in creation order (which is a
topological order), and `t.backward(root)` replays them once in reverse,
accumulating adjoints additively so fan-out sums correctly.

Conventions:
  * everything is float64; ties at min/max route the full gradient to the
    lowest attaining index (first operand for the binary forms);
  * clamp passes gradient only strictly inside the interval;
  * boolean comparisons (e.g. noise indicators) are constants w.r.t.
    differentiation;
  * ops run outside any tape evaluate eagerly and return constants.

Tapes are thread-confined: each thread sees its own active-tape stack, so
independent records may run concurrently over shared read-only leaves.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


class Value:
    """A node: dense array data plus a same-shape gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Value(shape={self.data.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_value(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_value(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_value(other), self)

    def __neg__(self):
        return mul(self, as_value(-1.0))


class Tape:
    """Ordered record of primitive applications; one backward pass each."""

    def __init__(self):
        self._nodes: list[Value] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        top = _tape_stack().pop()
        assert top is self, "tape nesting corrupted"
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, root: Value) -> None:
        """Seed d(root)=1 and accumulate adjoints into every recorded node."""
        if root.data.size != 1:
            raise ValueError("backward root must be a scalar")
        if root.grad is None:
            # Root not recorded (constant graph): nothing to propagate.
            return
        root.grad[...] = root.grad + 1.0
        for node in reversed(self._nodes):
            if node._backward is not None:
                node._backward(node.grad)


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def as_value(x) -> Value:
    """Lift a raw array or scalar into a constant leaf."""
    return x if isinstance(x, Value) else Value(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Value], backward) -> Value:
    """Attach a result to the active tape when any parent needs gradients."""
    tape = _active_tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Value(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward(out)
        tape._nodes.append(out)
    return out


def _check_shapes(a: Value, b: Value) -> None:
    if a.data.shape != b.data.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def _accum(p: Value, g: np.ndarray) -> None:
    if p.requires_grad:
        if p.data.ndim == 0 and np.ndim(g) != 0:
            g = g.sum()
        p.grad += g


# ---------------------------------------------------------------------------
# elementwise suite


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_shapes(a, b)

    def bw(out):
        def run(g):
            _accum(a, g)
            _accum(b, g)

        return run

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_shapes(a, b)

    def bw(out):
        def run(g):
            _accum(a, g)
            _accum(b, -g)

        return run

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _check_shapes(a, b)

    def bw(out):
        def run(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return run

    return _make(a.data * b.data, (a, b), bw)


def min2(a, b) -> Value:
    """Elementwise min; gradient goes to the selected operand, a on ties."""
    a, b = as_value(a), as_value(b)
    _check_shapes(a, b)
    take_a = a.data <= b.data

    def bw(out):
        def run(g):
            _accum(a, g * take_a)
            _accum(b, g * ~take_a)

        return run

    return _make(np.minimum(a.data, b.data), (a, b), bw)


def max2(a, b) -> Value:
    """Elementwise max; gradient goes to the selected operand, a on ties."""
    a, b = as_value(a), as_value(b)
    _check_shapes(a, b)
    take_a = a.data >= b.data

    def bw(out):
        def run(g):
            _accum(a, g * take_a)
            _accum(b, g * ~take_a)

        return run

    return _make(np.maximum(a.data, b.data), (a, b), bw)


def clamp(x, lo: float, hi: float) -> Value:
    """Clip to [lo, hi]; gradient passes only strictly inside the interval."""
    x = as_value(x)
    interior = (x.data > lo) & (x.data < hi)

    def bw(out):
        def run(g):
            _accum(x, g * interior)

        return run

    return _make(np.clip(x.data, lo, hi), (x,), bw)


def sigmoid(x) -> Value:
    x = as_value(x)
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bw(out):
        def run(g):
            _accum(x, g * out.data * (1.0 - out.data))

        return run

    return _make(y, (x,), bw)


def log(x) -> Value:
    x = as_value(x)

    def bw(out):
        def run(g):
            _accum(x, g / x.data)

        return run

    return _make(np.log(x.data), (x,), bw)


def dot(a, b) -> Value:
    """Inner product of two 1-D vectors."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError("dot expects two 1-D vectors of equal length")

    def bw(out):
        def run(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return run

    return _make(a.data @ b.data, (a, b), bw)


def matmul(a, b) -> Value:
    """[m, p] @ [p, n], or [m, p] @ [p] as a matrix-vector product."""
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ValueError("matmul expects a 2-D left operand")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"inner dims differ: {a.data.shape} @ {b.data.shape}")

    def bw(out):
        def run(g):
            if b.data.ndim == 1:
                _accum(a, np.outer(g, b.data))
                _accum(b, a.data.T @ g)
            else:
                _accum(a, g @ b.data.T)
                _accum(b, a.data.T @ g)

        return run

    return _make(a.data @ b.data, (a, b), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(x: np.ndarray, axis: int) -> int:
    return axis % x.ndim


def reduce_min(x, axis: int | None = None) -> Value:
    """Min over all entries (axis=None) or along one axis; tie -> lowest index."""
    x = as_value(x)
    if x.data.size == 0:
        raise ValueError("reduce over empty array")
    if axis is None:
        idx = np.unravel_index(np.argmin(x.data), x.data.shape)

        def bw(out):
            def run(g):
                if x.requires_grad:
                    buf = np.zeros_like(x.data)
                    buf[idx] = np.sum(g)
                    x.grad += buf

            return run

        return _make(x.data.min(), (x,), bw)

    ax = _norm_axis(x.data, axis)
    sel = np.expand_dims(np.argmin(x.data, axis=ax), ax)

    def bw(out):
        def run(g):
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                np.put_along_axis(buf, sel, np.expand_dims(g, ax), axis=ax)
                x.grad += buf

        return run

    return _make(x.data.min(axis=ax), (x,), bw)


def reduce_max(x, axis: int | None = None) -> Value:
    """Max over all entries (axis=None) or along one axis; tie -> lowest index."""
    x = as_value(x)
    if x.data.size == 0:
        raise ValueError("reduce over empty array")
    if axis is None:
        idx = np.unravel_index(np.argmax(x.data), x.data.shape)

        def bw(out):
            def run(g):
                if x.requires_grad:
                    buf = np.zeros_like(x.data)
                    buf[idx] = np.sum(g)
                    x.grad += buf

            return run

        return _make(x.data.max(), (x,), bw)

    ax = _norm_axis(x.data, axis)
    sel = np.expand_dims(np.argmax(x.data, axis=ax), ax)

    def bw(out):
        def run(g):
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                np.put_along_axis(buf, sel, np.expand_dims(g, ax), axis=ax)
                x.grad += buf

        return run

    return _make(x.data.max(axis=ax), (x,), bw)


def sum_all(x) -> Value:
    x = as_value(x)

    def bw(out):
        def run(g):
            _accum(x, np.broadcast_to(g, x.data.shape))

        return run

    return _make(x.data.sum(), (x,), bw)


def mean_all(x) -> Value:
    x = as_value(x)
    n = x.data.size

    def bw(out):
        def run(g):
            _accum(x, np.broadcast_to(g / n, x.data.shape))

        return run

    return _make(x.data.mean(), (x,), bw)


def sum_axes(x, axes: tuple[int, ...]) -> Value:
    x = as_value(x)
    axes = tuple(_norm_axis(x.data, a) for a in axes)

    def bw(out):
        def run(g):
            if x.requires_grad:
                ge = g
                for a in sorted(axes):
                    ge = np.expand_dims(ge, a)
                x.grad += np.broadcast_to(ge, x.data.shape)

        return run

    return _make(x.data.sum(axis=axes), (x,), bw)


def reshape(x, shape) -> Value:
    x = as_value(x)

    def bw(out):
        def run(g):
            _accum(x, g.reshape(x.data.shape))

        return run

    return _make(x.data.reshape(shape), (x,), bw)


def expand_last(x, n: int) -> Value:
    """Repeat along a new trailing axis; adjoint sums it back out."""
    x = as_value(x)

    def bw(out):
        def run(g):
            _accum(x, g.sum(axis=-1))

        return run

    return _make(
        np.broadcast_to(x.data[..., None], x.data.shape + (n,)).copy(), (x,), bw
    )


def stack_last(parts: Sequence) -> Value:
    """Stack equal-shape arrays along a new trailing axis."""
    vals = [as_value(p) for p in parts]
    base = vals[0].data.shape
    if any(v.data.shape != base for v in vals):
        raise ValueError("stack_last requires equal shapes")

    def bw(out):
        def run(g):
            for i, v in enumerate(vals):
                _accum(v, g[..., i])

        return run

    return _make(np.stack([v.data for v in vals], axis=-1), tuple(vals), bw)


def softmax(x, axis: int = -1) -> Value:
    """Numerically stable softmax along one axis."""
    x = as_value(x)
    if not np.all(np.isfinite(x.data)):
        raise ValueError("softmax requires finite inputs")
    ax = _norm_axis(x.data, axis)
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def bw(out):
        def run(g):
            if x.requires_grad:
                inner = (g * out.data).sum(axis=ax, keepdims=True)
                x.grad += (g - inner) * out.data

        return run

    return _make(y, (x,), bw)


def affine_last(x, shift, scale) -> Value:
    """(x - shift) / scale with shift/scale vectors applied along the last axis."""
    x, shift, scale = as_value(x), as_value(shift), as_value(scale)
    if x.data.shape[-1] != shift.data.shape[0] or shift.data.shape != scale.data.shape:
        raise ValueError("shift/scale must match the trailing axis")
    z = (x.data - shift.data) / scale.data
    lead = tuple(range(x.data.ndim - 1))

    def bw(out):
        def run(g):
            gs = g / scale.data
            _accum(x, gs)
            if shift.requires_grad:
                shift.grad += -gs.sum(axis=lead)
            if scale.requires_grad:
                scale.grad += -(gs * out.data).sum(axis=lead)

        return run

    return _make(z, (x, shift, scale), bw)


# ---------------------------------------------------------------------------
# convolution


def conv1d_valid(x, kernel, stride: int = 1) -> Value:
    """Valid strided 1-D convolution along the trailing axis.

    out[..., j] = sum_i x[..., j*stride + i] * kernel[i];
    output length t = floor((T - l) / stride) + 1.  Adjoints scatter-add
    into both the input and the kernel.
    """
    x, kernel = as_value(x), as_value(kernel)
    if kernel.data.ndim != 1:
        raise ValueError("kernel must be 1-D")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    l = kernel.data.shape[0]
    T = x.data.shape[-1]
    if l > T:
        raise ValueError(f"kernel length {l} exceeds input length {T}")
    t = (T - l) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, l, axis=-1)[
        ..., ::stride, :
    ]
    out_data = windows @ kernel.data

    def bw(out):
        def run(g):
            if kernel.requires_grad:
                kernel.grad += np.einsum(
                    "btl,bt->l", windows.reshape(-1, t, l), g.reshape(-1, t)
                )
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                for i in range(l):
                    buf[..., i : i + stride * (t - 1) + 1 : stride] += (
                        g * kernel.data[i]
                    )
                x.grad += buf

        return run

    return _make(out_data, (x, kernel), bw)


def conv1d_per_event(x, kernels, stride: int = 1) -> Value:
    """Per-event valid convolution: x [..., X, T] with kernels [X, l].

    Row x[..., e, :] is convolved with kernels[e].  Vectorised equivalent
    of calling :func:`conv1d_valid` once per event row.
    """
    x, kernels = as_value(x), as_value(kernels)
    if kernels.data.ndim != 2:
        raise ValueError("kernels must be [events, l]")
    if x.data.shape[-2] != kernels.data.shape[0]:
        raise ValueError("event axis mismatch between input and kernels")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    l = kernels.data.shape[1]
    T = x.data.shape[-1]
    if l > T:
        raise ValueError(f"kernel length {l} exceeds input length {T}")
    t = (T - l) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, l, axis=-1)[
        ..., ::stride, :
    ]  # [..., X, t, l]
    out_data = np.einsum("...xtl,xl->...xt", windows, kernels.data)

    nx = kernels.data.shape[0]

    def bw(out):
        def run(g):
            if kernels.requires_grad:
                kernels.grad += np.einsum(
                    "bxtl,bxt->xl",
                    windows.reshape(-1, nx, t, l),
                    g.reshape(-1, nx, t),
                )
            if x.requires_grad:
                buf = np.zeros_like(x.data)
                for i in range(l):
                    buf[..., i : i + stride * (t - 1) + 1 : stride] += (
                        g * kernels.data[:, i : i + 1]
                    )
                x.grad += buf

        return run

    return _make(out_data, (x, kernels), bw)


# ---------------------------------------------------------------------------
# object-pair expansion for the pairwise relation pass


def tile_pairs(x, role: str) -> Value:
    """Broadcast per-(object, event) stats over ordered object/event pairs.

    Input [B, k, X] becomes [B, k, k, X, X]:
      role 'u': out[b, i, j, u, v] = x[b, i, u]
      role 'v': out[b, i, j, u, v] = x[b, j, v]
    The adjoint sums over the tiled axes.
    """
    x = as_value(x)
    if x.data.ndim != 3:
        raise ValueError("tile_pairs expects [batch, objects, events]")
    b, k, xs = x.data.shape
    if role == "u":
        view = x.data[:, :, None, :, None]
        axes = (2, 4)
    elif role == "v":
        view = x.data[:, None, :, None, :]
        axes = (1, 3)
    else:
        raise ValueError("role must be 'u' or 'v'")
    out_data = np.broadcast_to(view, (b, k, k, xs, xs)).copy()

    def bw(out):
        def run(g):
            _accum(x, g.sum(axis=axes))

        return run

    return _make(out_data, (x,), bw)


# ---------------------------------------------------------------------------
# regularisation and validation


def dropout(x, rate: float, rng: np.random.Generator, training: bool) -> Value:
    """Inverted dropout: zero entries with probability `rate` and rescale
    survivors by 1/(1-rate) during training; identity in evaluation."""
    x = as_value(x)
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def bw(out):
        def run(g):
            _accum(x, g * mask)

        return run

    return _make(x.data * mask, (x,), bw)


def grad_check(
    f: Callable[[Value], Value], x0: np.ndarray, step: float = 1e-3
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must map a Value holding an array like `x0` to a scalar Value and be
    smooth near x0 (keep sample points away from min/max ties).
    """
    x = Value(np.array(x0, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        out = f(x)
    tape.backward(out)
    analytic = x.grad.copy()

    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        fp = float(f(x).data)
        flat[i] = keep - step
        fm = float(f(x).data)
        flat[i] = keep
        nflat[i] = (fp - fm) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)))
