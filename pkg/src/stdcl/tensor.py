"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: row-major numpy storage, a dynamic tape built
as ops execute, and hand-written backward rules replayed in reverse
topological order.  No broadcasting beyond scalar operands, no views.

Precision (float64 for gradient-check builds, float32 for training runs)
and checked mode (reject any non-finite intermediate) are process-wide
switches, not per-tensor properties.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateVectorError, DimensionError, DomainError, NumericError

_DTYPES = {"float64": np.float64, "float32": np.float32}

_precision = "float64"
_checked = True

# Test hook: name of an op whose backward rule gets its sign flipped, used to
# prove the gradient checker actually catches broken rules.
_fault_op: str | None = None

# When not None, relu() appends min|input| here; the gradient checker uses it
# to reject test points that sit on the kink.
_relu_gap_trace: list | None = None

NORM_EPSILON = 1e-12


def set_precision(name: str) -> None:
    global _precision
    if name not in _DTYPES:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}")
    _precision = name


def get_precision() -> str:
    return _precision


def active_dtype() -> np.dtype:
    return np.dtype(_DTYPES[_precision])


def set_checked(flag: bool) -> None:
    global _checked
    _checked = bool(flag)


def is_checked() -> bool:
    return _checked


@contextmanager
def using_precision(name: str):
    previous = _precision
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


@contextmanager
def using_checked(flag: bool):
    previous = _checked
    set_checked(flag)
    try:
        yield
    finally:
        set_checked(previous)


@contextmanager
def inject_backward_fault(op: str):
    """Flip the sign of `op`'s backward rule inside the block (test hook)."""
    global _fault_op
    previous = _fault_op
    _fault_op = op
    try:
        yield
    finally:
        _fault_op = previous


@contextmanager
def trace_relu_gaps():
    """Collect min|x| seen by relu() inside the block."""
    global _relu_gap_trace
    previous = _relu_gap_trace
    trace: list = []
    _relu_gap_trace = trace
    try:
        yield trace
    finally:
        _relu_gap_trace = previous


class Tensor:
    """A dense real tensor, optionally recording onto the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=active_dtype())
        if _checked and not np.all(np.isfinite(arr)):
            raise NumericError("tensor: non-finite value in constructor input")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Run the tape backward from this scalar, accumulating into .grad."""
        if self.size != 1:
            raise DimensionError(f"backward: root must be a scalar, got shape {self.shape}")
        order = _toposort(self)
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is None:
                continue
            g = node.grad
            if _fault_op is not None and node._op == _fault_op:
                g = -g
            node._backward_fn(g)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalar operands mean python floats, not 0-d tensors.
    def __add__(self, other):
        return add_scalar(self, other) if isinstance(other, (int, float)) else add(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return add_scalar(self, -other) if isinstance(other, (int, float)) else sub(self, other)

    def __mul__(self, other):
        return scalar_mul(self, other) if isinstance(other, (int, float)) else mul(self, other)

    def __rmul__(self, other):
        return scalar_mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _checked and not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: non-finite value in result")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
        out._op = None
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# binary / elementwise ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out_data, (a, b), backward, "matmul")


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), backward, "mul")


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * c)

    return _make(x.data * c, (x,), backward, "scalar_mul")


def add_scalar(x: Tensor, s) -> Tensor:
    """x + s where s is a python float or a scalar tensor (broadcast)."""
    if isinstance(s, Tensor):
        if s.size != 1:
            raise DimensionError(f"add_scalar: scalar operand has shape {s.shape}")

        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                x._accumulate(g)
            if s.requires_grad:
                s._accumulate(np.asarray(g.sum()).reshape(s.shape))

        return _make(x.data + s.data.item(), (x, s), backward, "add_scalar")

    c = float(s)

    def backward_const(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g)

    return _make(x.data + c, (x,), backward_const, "add_scalar")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * out_data)

    return _make(out_data, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    if _checked and np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g / x.data)

    return _make(out_data, (x,), backward, "log")


def relu(x: Tensor) -> Tensor:
    if _relu_gap_trace is not None:
        _relu_gap_trace.append(float(np.min(np.abs(x.data))) if x.size else np.inf)
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward, "relu")


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old_shape = x.shape

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(g.reshape(old_shape))

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def concat_flatten(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate the row-major flattenings of `tensors` into one vector."""
    parts = list(tensors)
    if not parts:
        raise DimensionError("concat_flatten: needs at least one tensor")
    sizes = [t.size for t in parts]
    offsets = np.cumsum([0] + sizes)
    out_data = np.concatenate([t.data.reshape(-1) for t in parts])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi].reshape(t.shape))

    return _make(out_data, parts, backward, "concat_flatten")


def gather1d(x: Tensor, indices: Sequence[int]) -> Tensor:
    if x.data.ndim != 1:
        raise DimensionError(f"gather1d: expects a vector, got shape {x.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise IndexError(f"gather1d: index out of range for length {x.size}")

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, idx, g)

    return _make(x.data[idx], (x,), backward, "gather1d")


# ---------------------------------------------------------------------------
# reductions


def _validate_axes(x: Tensor, axes, op: str) -> tuple[int, ...]:
    axes = tuple(sorted(int(a) for a in axes))
    if not axes:
        raise DimensionError(f"{op}: empty axis set (request identity explicitly instead)")
    if len(set(axes)) != len(axes):
        raise DimensionError(f"{op}: duplicate axes {axes}")
    if any(a < 0 or a >= x.data.ndim for a in axes):
        raise DimensionError(f"{op}: axis out of range for shape {x.shape}: {axes}")
    return axes


def sum_over_axes(x: Tensor, axes) -> Tensor:
    axes = _validate_axes(x, axes, "sum_over_axes")
    in_shape = x.shape

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axes), in_shape))

    return _make(x.data.sum(axis=axes), (x,), backward, "sum_over_axes")


def mean_over_axes(x: Tensor, axes) -> Tensor:
    axes = _validate_axes(x, axes, "mean_over_axes")
    in_shape = x.shape
    count = int(np.prod([in_shape[a] for a in axes], dtype=np.int64))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axes), in_shape) / count)

    return _make(x.data.mean(axis=axes), (x,), backward, "mean_over_axes")


def sum_all(x: Tensor) -> Tensor:
    return sum_over_axes(x, tuple(range(x.data.ndim))) if x.data.ndim else x


# ---------------------------------------------------------------------------
# task-specific ops


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], stable under large logits."""
    if logits.data.ndim != 1 or logits.size < 2:
        raise DimensionError(f"softmax_cross_entropy: expects a vector of >=2 logits, got {logits.shape}")
    target = int(target)
    if not 0 <= target < logits.size:
        raise IndexError(f"softmax_cross_entropy: target {target} out of range [0, {logits.size})")
    shifted = logits.data - logits.data.max()
    exps = np.exp(shifted)
    total = exps.sum()
    loss = np.log(total) - shifted[target]
    probs = exps / total

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            d = probs.copy()
            d[target] -= 1.0
            logits._accumulate(g * d)

    return _make(np.asarray(loss, dtype=active_dtype()), (logits,), backward, "softmax_cross_entropy")


def l2_normalize(v: Tensor) -> Tensor:
    if v.data.ndim != 1:
        raise DimensionError(f"l2_normalize: expects a vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v.data))
    if norm <= NORM_EPSILON:
        raise DegenerateVectorError(f"l2_normalize: norm {norm:g} below {NORM_EPSILON:g}")
    unit = v.data / norm

    def backward(g: np.ndarray) -> None:
        if v.requires_grad:
            v._accumulate((g - unit * float(unit @ g)) / norm)

    return _make(unit, (v,), backward, "l2_normalize")


def temporal_conv(
    x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, padding: str = "zero"
) -> Tensor:
    """1-d convolution along the frame axis, shared across joints.

    x: (J, T, C_in); w: (k, C_in, C_out) with odd k; bias: (C_out,).
    'same' padding, either zero-filled or circular (frame indices wrap);
    output frames = ceil(T / stride).  With circular padding and stride 1
    the summed output over frames equals (sum of kernel taps) times the
    summed input, so time-pooled statistics commute with the convolution.
    """
    if x.data.ndim != 3 or w.data.ndim != 3 or bias.data.ndim != 1:
        raise DimensionError(
            f"temporal_conv: expects x (J,T,C), w (k,C,C'), bias (C',), got {x.shape}, {w.shape}, {bias.shape}"
        )
    k, c_in, c_out = w.shape
    if k % 2 == 0:
        raise DimensionError(f"temporal_conv: kernel size must be odd, got {k}")
    if x.shape[2] != c_in or bias.shape[0] != c_out:
        raise DimensionError(f"temporal_conv: channel mismatch: x {x.shape}, w {w.shape}, bias {bias.shape}")
    stride = int(stride)
    if stride < 1:
        raise DimensionError(f"temporal_conv: stride must be >= 1, got {stride}")
    if padding not in ("zero", "circular"):
        raise DimensionError(f"temporal_conv: padding must be 'zero' or 'circular', got {padding!r}")
    joints, frames, _ = x.shape
    pad = k // 2
    t_out = -(-frames // stride)

    if padding == "circular":
        out_data = np.broadcast_to(bias.data, (joints, t_out, c_out)).copy()
        base = np.arange(t_out) * stride - pad
        sources = [(base + d) % frames for d in range(k)]
        for d in range(k):
            out_data += np.einsum("jtc,cd->jtd", x.data[:, sources[d], :], w.data[d])

        def backward_circular(g: np.ndarray) -> None:
            if bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 1)))
            dx = np.zeros_like(x.data) if x.requires_grad else None
            for d in range(k):
                if w.requires_grad:
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[d] += np.einsum("jtc,jtd->cd", x.data[:, sources[d], :], g)
                if dx is not None:
                    np.add.at(dx, (slice(None), sources[d], slice(None)),
                              np.einsum("jtd,cd->jtc", g, w.data[d]))
            if dx is not None:
                x._accumulate(dx)

        return _make(out_data, (x, w, bias), backward_circular, "temporal_conv")

    xpad = np.zeros((joints, frames + 2 * pad, c_in), dtype=x.data.dtype)
    xpad[:, pad : pad + frames, :] = x.data

    out_data = np.broadcast_to(bias.data, (joints, t_out, c_out)).copy()
    stop = stride * (t_out - 1) + 1
    for d in range(k):
        seg = xpad[:, d : d + stop : stride, :]
        out_data += np.einsum("jtc,cd->jtd", seg, w.data[d])

    def backward(g: np.ndarray) -> None:
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 1)))
        if w.requires_grad or x.requires_grad:
            dxpad = np.zeros_like(xpad) if x.requires_grad else None
            for d in range(k):
                seg = xpad[:, d : d + stop : stride, :]
                if w.requires_grad:
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[d] += np.einsum("jtc,jtd->cd", seg, g)
                if dxpad is not None:
                    dxpad[:, d : d + stop : stride, :] += np.einsum("jtd,cd->jtc", g, w.data[d])
            if dxpad is not None:
                x._accumulate(dxpad[:, pad : pad + frames, :])

    return _make(out_data, (x, w, bias), backward, "temporal_conv")
