"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Every operation below has a closed-form vector-Jacobian product. When a Tape
is active and any operand requires gradients, the op appends a record to the
tape; Tape.backward walks the records in reverse, accumulating gradients into
the ``grad`` slot of every requires_grad tensor reachable from the loss.

A tape and the tensors it records are confined to one execution context.
Calling backward a second time on the same tape raises ContractError: the
tape is reset by backward, so a fresh forward pass is required per step.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DTYPE = np.float64


class Tensor:
    """Multidimensional real-valued array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar; floats/arrays are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _promote(other))

    def __radd__(self, other):
        return add(_promote(other), self)

    def __sub__(self, other):
        return sub(self, _promote(other))

    def __rsub__(self, other):
        return sub(_promote(other), self)

    def __mul__(self, other):
        return mul(self, _promote(other))

    def __rmul__(self, other):
        return mul(_promote(other), self)

    def __truediv__(self, other):
        return div(self, _promote(other))

    def __rtruediv__(self, other):
        return div(_promote(other), self)

    def __neg__(self):
        return mul(self, _promote(-1.0))


def parameter(data, name: Optional[str] = None) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True, name=name)


def _promote(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_context = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_context, "tape", None)


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("a tape is already active in this context")
        _context.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _context.tape = None

    def _record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> None:
        self._nodes.append(_Node(out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

        Gradients add into any existing ``grad`` content, so accumulating
        across several tapes (one per batch member) is a deterministic
        ordered summation. This tape is reset afterwards.
        """
        if self._spent:
            raise ContractError("tape already consumed by backward; run a new forward pass")
        if loss.data.shape != ():
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._spent = True

        pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=DTYPE)}

        def deposit(t: Tensor, g: np.ndarray) -> None:
            # gradient arrays are never mutated in place, so aliasing is safe
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g

        for node in reversed(self._nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue  # not reachable from the loss
            deposit(node.out, g)
            for inp, part in zip(node.inputs, node.vjp(g)):
                if part is None:
                    continue
                held = pending.get(id(inp))
                pending[id(inp)] = part if held is None else held + part

        # Whatever remains un-popped belongs to leaves (no producing node).
        leftovers: dict[int, np.ndarray] = pending
        seen_outputs = {id(n.out) for n in self._nodes}
        for node in self._nodes:
            for inp in node.inputs:
                if id(inp) in leftovers and id(inp) not in seen_outputs:
                    deposit(inp, leftovers.pop(id(inp)))
        if id(loss) in leftovers:  # loss was itself a leaf
            deposit(loss, leftovers.pop(id(loss)))
        self._nodes.clear()


def _make(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape._record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(a.data / b.data, (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a non-trainable python scalar."""
    f = float(factor)

    def vjp(g):
        return (g * f,)

    return _make(a.data * f, (a,), vjp)


# ---------------------------------------------------------------------------
# activations and pointwise functions
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at 0 is 0

    def vjp(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])  # split form never exponentiates a positive value
    s[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _make(t, (a,), vjp)


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); derivative is zero wherever the floor is active."""
    clamped = np.maximum(a.data, floor)
    open_region = a.data > floor

    def vjp(g):
        return (g * open_region / clamped,)

    return _make(np.log(clamped), (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape

    def vjp(g):
        return (g.reshape(src),)

    return _make(a.data.reshape(shape), (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(int(i) for i in np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(a.data, axes), (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DimensionError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > a.shape[axis]:
        raise DimensionError(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of shape {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def vjp(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else a.shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), vjp)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum contraction with einsum-expressible backward.

    Restricted to specs where no index repeats within one operand and every
    index of each operand appears in the other operand or in the output;
    this covers batched matrix products and weighted sums.
    """
    try:
        lhs, out_spec = spec.replace(" ", "").split("->")
        a_spec, b_spec = lhs.split(",")
    except ValueError as exc:
        raise DimensionError(f"einsum spec {spec!r} must look like 'ab,bc->ac'") from exc
    for s in (a_spec, b_spec, out_spec):
        if len(set(s)) != len(s):
            raise DimensionError(f"einsum spec {spec!r}: repeated index within one term")
    for ch in a_spec:
        if ch not in b_spec and ch not in out_spec:
            raise DimensionError(f"einsum spec {spec!r}: index {ch!r} of A is unrecoverable")
    for ch in b_spec:
        if ch not in a_spec and ch not in out_spec:
            raise DimensionError(f"einsum spec {spec!r}: index {ch!r} of B is unrecoverable")

    def vjp(g):
        da = np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, b.data, optimize=True)
        db = np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, a.data, optimize=True)
        return da, db

    return _make(np.einsum(spec, a.data, b.data, optimize=True), (a, b), vjp)


# ---------------------------------------------------------------------------
# norms, softmax, squashing
# ---------------------------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Stable softmax of a 1-D tensor; output is positive and sums to 1."""
    if a.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    s = e / e.sum()

    def vjp(g):
        return (s * (g - np.dot(g, s)),)

    return _make(s, (a,), vjp)


def l2norm_rows(a: Tensor) -> Tensor:
    """Euclidean norm of every row of a [num, dim] tensor."""
    if a.ndim != 2:
        raise DimensionError(f"l2norm_rows expects [num, dim], got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1))

    def vjp(g):
        safe = np.where(norms > 0.0, norms, 1.0)
        coef = np.where(norms > 0.0, g / safe, 0.0)  # zero-vector subgradient is zero
        return (coef[:, None] * a.data,)

    return _make(norms, (a,), vjp)


def l2norm(a: Tensor) -> Tensor:
    """Euclidean norm of a vector as a scalar tensor."""
    if a.ndim != 1:
        raise DimensionError(f"l2norm expects a vector, got shape {a.shape}")
    n = float(np.sqrt((a.data * a.data).sum()))

    def vjp(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / n,)

    return _make(np.asarray(n), (a,), vjp)


def squash_rows(a: Tensor) -> Tensor:
    """Row-wise bounded-norm nonlinearity: s -> (|s|^2/(1+|s|^2)) * s/|s|.

    Every output row keeps its direction with norm in [0, 1); the zero row
    maps to zero with zero Jacobian, which removes the origin singularity.
    """
    if a.ndim != 2:
        raise DimensionError(f"squash_rows expects [num, dim], got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1))
    alpha = norms / (1.0 + norms * norms)  # == (n^2/(1+n^2)) / n, finite at 0
    out = alpha[:, None] * a.data

    def vjp(g):
        rowdot = (g * a.data).sum(axis=1)
        dalpha = (1.0 - norms * norms) / (1.0 + norms * norms) ** 2
        coef = np.where(norms > 0.0, dalpha * rowdot / np.where(norms > 0, norms, 1.0), 0.0)
        return (alpha[:, None] * g + coef[:, None] * a.data,)

    return _make(out, (a,), vjp)


def squash(a: Tensor) -> Tensor:
    """Vector form of squash_rows."""
    return reshape(squash_rows(reshape(a, (1, -1))), a.shape)


# ---------------------------------------------------------------------------
# convolution machinery
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernels: Tensor, stride: int, bias: Tensor) -> Tensor:
    """Valid (no padding) cross-correlation of [c_in,h,w] with [c_out,c_in,k,k]."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d expects input [c,h,w] and kernels [o,c,k,k], got {x.shape} and {kernels.shape}"
        )
    c_out, c_in, kh, kw = kernels.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape} vs kernels {kernels.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be [{c_out}], got {bias.shape}")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d stride must be 1 or 2, got {stride}")
    h, w = x.shape[1], x.shape[2]
    if h < kh or w < kw:
        raise DimensionError(f"conv2d input {x.shape} smaller than kernel {kh}x{kw}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1

    cols = np.empty((c_in, kh, kw, oh, ow), dtype=DTYPE)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, ki, kj] = x.data[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
    cols2d = cols.reshape(c_in * kh * kw, oh * ow)
    k2d = kernels.data.reshape(c_out, c_in * kh * kw)
    out = (k2d @ cols2d + bias.data[:, None]).reshape(c_out, oh, ow)

    def vjp(g):
        g2d = g.reshape(c_out, oh * ow)
        dk = (g2d @ cols2d.T).reshape(kernels.shape)
        dbias = g2d.sum(axis=1)
        dcols = (k2d.T @ g2d).reshape(c_in, kh, kw, oh, ow)
        dx = np.zeros(x.shape, dtype=DTYPE)
        for ki in range(kh):
            for kj in range(kw):
                dx[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[:, ki, kj]
        return dx, dk, dbias

    return _make(out, (x, kernels, bias), vjp)


def pad2d(x: Tensor, before: int, after: int) -> Tensor:
    """Zero-pad both spatial axes of [c,h,w]."""
    if x.ndim != 3:
        raise DimensionError(f"pad2d expects [c,h,w], got shape {x.shape}")
    widths = ((0, 0), (before, after), (before, after))

    def vjp(g):
        return (g[:, before : g.shape[1] - after, before : g.shape[2] - after],)

    return _make(np.pad(x.data, widths), (x,), vjp)


def upsample_zeros(x: Tensor, stride: int) -> Tensor:
    """Interleave zeros so [c,h,w] becomes [c,(h-1)s+1,(w-1)s+1]; adjoint of striding."""
    if x.ndim != 3:
        raise DimensionError(f"upsample_zeros expects [c,h,w], got shape {x.shape}")
    c, h, w = x.shape
    out = np.zeros((c, (h - 1) * stride + 1, (w - 1) * stride + 1), dtype=DTYPE)
    out[:, ::stride, ::stride] = x.data

    def vjp(g):
        return (g[:, ::stride, ::stride].copy(),)

    return _make(out, (x,), vjp)
