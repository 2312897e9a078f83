"""Dense-tensor reverse-mode differentiation over a fixed operator set.

Values are plain numpy arrays. A :class:`Node` records the operator that
produced it and its inputs; values are computed eagerly at construction and
can be recomputed from leaf values with :func:`forward`. :func:`backward`
fills ``grad`` on every leaf created with ``requires_grad=True``.

Only scalar-times-tensor broadcasting is allowed; every other shape mix
raises :class:`ShapeError`.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_creation = itertools.count()


class ShapeError(ValueError):
    pass


class Node:
    __slots__ = ("op", "inputs", "value", "grad", "requires_grad", "index")

    def __init__(self, value, op: "Op | None" = None, inputs: Sequence["Node"] = (),
                 requires_grad: bool = False):
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.index = next(_creation)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def __repr__(self) -> str:
        tag = self.op.name if self.op is not None else "leaf"
        return f"Node({tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(value, requires_grad: bool = False, dtype=None) -> Node:
    arr = np.array(value, dtype=dtype if dtype is not None else np.float64)
    if arr.ndim > 0 and min(arr.shape) < 1:
        raise ShapeError(f"leaf: all extents must be >= 1, got {arr.shape}")
    return Node(arr, requires_grad=requires_grad)


def constant(value, dtype=None) -> Node:
    return leaf(value, requires_grad=False, dtype=dtype)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


class Op:
    """One operator: ``forward`` maps input values to a value, ``backward``
    maps the output gradient to one gradient per input (``None`` to skip)."""

    name = "op"
    # which inputs need a gradient; set by backward() before each call
    need = (True,) * 8

    def forward(self, *xs):
        raise NotImplementedError

    def backward(self, g, out, *xs):
        raise NotImplementedError


def _apply(op: Op, *inputs) -> Node:
    nodes = [_as_node(x) for x in inputs]
    value = op.forward(*(n.value for n in nodes))
    return Node(value, op, nodes, any(n.requires_grad for n in nodes))


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ------------------------------------------------------------

class Add(Op):
    name = "add"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        return a + b

    def backward(self, g, out, a, b):
        return g, g


class Sub(Op):
    name = "sub"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        return a - b

    def backward(self, g, out, a, b):
        return g, -g


class Mul(Op):
    name = "mul"

    def forward(self, a, b):
        _same_shape(self.name, a, b)
        return a * b

    def backward(self, g, out, a, b):
        return g * b, g * a


class Scale(Op):
    name = "scale"

    def __init__(self, c: float):
        self.c = float(c)

    def forward(self, a):
        return a * self.c

    def backward(self, g, out, a):
        return (g * self.c,)


class Relu(Op):
    name = "relu"

    def forward(self, a):
        return np.maximum(a, 0)

    def backward(self, g, out, a):
        return (g * (a > 0),)


class AddBias(Op):
    """``x + b`` with ``b`` laid along one axis of ``x``."""

    name = "add_bias"

    def __init__(self, axis: int):
        self.axis = axis

    def _view(self, b, ndim):
        shape = [1] * ndim
        shape[self.axis] = b.shape[0]
        return b.reshape(shape)

    def forward(self, x, b):
        if b.ndim != 1 or x.shape[self.axis] != b.shape[0]:
            raise ShapeError(f"{self.name}: shape mismatch {x.shape} vs {b.shape} on axis {self.axis}")
        return x + self._view(b, x.ndim)

    def backward(self, g, out, x, b):
        axes = tuple(i for i in range(g.ndim) if i != self.axis % g.ndim)
        return g, g.sum(axis=axes)


# -- reductions -------------------------------------------------------------

class Sum(Op):
    name = "sum"

    def __init__(self, axis=None):
        self.axis = axis

    def forward(self, a):
        return np.sum(a, axis=self.axis)

    def backward(self, g, out, a):
        if self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g, a.shape).copy(),)


class Mean(Op):
    name = "mean"

    def __init__(self, axis=None):
        self.axis = axis

    def forward(self, a):
        return np.mean(a, axis=self.axis)

    def backward(self, g, out, a):
        count = a.size // max(out.size, 1)
        if self.axis is not None:
            g = np.expand_dims(g, self.axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)


class SquaredL2(Op):
    name = "sq_l2"

    def forward(self, a):
        return np.sum(a * a)

    def backward(self, g, out, a):
        return (2.0 * g * a,)


class L2Normalize(Op):
    """Row-wise ``x / ||x||`` for a 2-D input; zero rows stay zero."""

    name = "l2_normalize"

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"{self.name}: expected 2-D input, got {a.shape}")
        norm = np.sqrt(np.sum(a * a, axis=1, keepdims=True))
        return a / np.maximum(norm, self.eps)

    def backward(self, g, out, a):
        norm = np.maximum(np.sqrt(np.sum(a * a, axis=1, keepdims=True)), self.eps)
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) / norm,)


# -- linear algebra and layers ----------------------------------------------

class MatMul(Op):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"{self.name}: shape mismatch {a.shape} vs {b.shape}")
        return a @ b

    def backward(self, g, out, a, b):
        return g @ b.T, a.T @ g


class Conv3d(Op):
    """Same-padded stride-1 convolution over (time, height, width).

    Input ``[B][T][C_in][H][W]``, weight ``[C_out][C_in][kt][kh][kw]`` with odd
    kernel extents, bias ``[C_out]``; output ``[B][T][C_out][H][W]``.
    Lowered to one batched matrix product per frame over patch columns laid
    out ``[B*T][offset*C_in][H*W]``, which keeps the native layout throughout.
    """

    name = "conv3d"

    @staticmethod
    def _offsets(kshape):
        kt, kh, kw = kshape
        return [(dt, dh, dw) for dt in range(kt) for dh in range(kh) for dw in range(kw)]

    def _columns(self, x, kshape):
        B, T, Ci, H, W = x.shape
        kt, kh, kw = kshape
        xp = np.pad(x, ((0, 0), (kt // 2, kt // 2), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
        offsets = self._offsets(kshape)
        cols = np.empty((B, T, len(offsets), Ci, H, W), dtype=x.dtype)
        for o, (dt, dh, dw) in enumerate(offsets):
            cols[:, :, o] = xp[:, dt:dt + T, :, dh:dh + H, dw:dw + W]
        return cols.reshape(B * T, len(offsets) * Ci, H * W)

    @staticmethod
    def _weight_matrix(w):
        # columns ordered (offset, C_in) to match _columns
        return np.ascontiguousarray(w.transpose(0, 2, 3, 4, 1).reshape(w.shape[0], -1))

    def forward(self, x, w, b):
        if x.ndim != 5 or w.ndim != 5 or x.shape[2] != w.shape[1] or b.shape != (w.shape[0],):
            raise ShapeError(f"{self.name}: shape mismatch {x.shape} vs {w.shape}")
        if any(k % 2 == 0 for k in w.shape[2:]):
            raise ShapeError(f"{self.name}: kernel extents must be odd, got {w.shape[2:]}")
        B, T, _, H, W = x.shape
        out = np.matmul(self._weight_matrix(w), self._columns(x, w.shape[2:]))
        out += b[:, None]
        return out.reshape(B, T, -1, H, W)

    def backward(self, g, out, x, w, b):
        B, T, Ci, H, W = x.shape
        Co = w.shape[0]
        kt, kh, kw = kshape = w.shape[2:]
        g3 = g.reshape(B * T, Co, H * W)
        gx = gw = gb = None
        if self.need[2]:
            gb = g3.sum(axis=(0, 2))
        if self.need[1]:
            cols = self._columns(x, kshape)
            gmat = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            gw = gmat.reshape(Co, kt, kh, kw, Ci).transpose(0, 4, 1, 2, 3)
        if self.need[0]:
            wmat_t = np.ascontiguousarray(self._weight_matrix(w).T)
            gcols = np.matmul(wmat_t, g3).reshape(B, T, -1, Ci, H, W)
            gxp = np.zeros((B, T + kt - 1, Ci, H + kh - 1, W + kw - 1), dtype=g.dtype)
            for o, (dt, dh, dw) in enumerate(self._offsets(kshape)):
                gxp[:, dt:dt + T, :, dh:dh + H, dw:dw + W] += gcols[:, :, o]
            gx = gxp[:, kt // 2:kt // 2 + T, :, kh // 2:kh // 2 + H, kw // 2:kw // 2 + W]
        return gx, gw, gb


class TemporalConv1d(Op):
    """``out[t] = sum_j kernel[j] * x[t*stride + j] + bias`` along axis 0.

    One kernel is shared across every non-temporal position; no padding.
    """

    name = "temporal_conv1d"

    def __init__(self, stride: int = 1):
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.stride = stride

    def _t_out(self, t_in, k):
        return (t_in - k) // self.stride + 1

    def forward(self, x, kernel, bias):
        if kernel.ndim != 1 or bias.shape != () or x.shape[0] < kernel.shape[0]:
            raise ShapeError(f"{self.name}: shape mismatch {x.shape} vs {kernel.shape}")
        K = kernel.shape[0]
        n = self._t_out(x.shape[0], K)
        idx = np.arange(n)[:, None] * self.stride + np.arange(K)[None, :]
        return np.tensordot(x[idx], kernel, axes=([1], [0])) + bias

    def backward(self, g, out, x, kernel, bias):
        K = kernel.shape[0]
        n = g.shape[0]
        span = self.stride * (n - 1) + 1
        gx = np.zeros_like(x)
        gk = np.empty_like(kernel)
        for j in range(K):
            xs = x[j:j + span:self.stride]
            gk[j] = np.sum(g * xs)
            gx[j:j + span:self.stride] += kernel[j] * g
        return gx, gk, np.sum(g)


class AvgPool2d(Op):
    """Non-overlapping average pooling over the last two axes."""

    name = "avg_pool"

    def __init__(self, size: int):
        self.size = size

    def forward(self, x):
        p = self.size
        H, W = x.shape[-2:]
        if H % p or W % p:
            raise ShapeError(f"{self.name}: spatial shape {x.shape[-2:]} not divisible by {p}")
        out = np.zeros(x.shape[:-2] + (H // p, W // p), dtype=x.dtype)
        for i in range(p):
            for j in range(p):
                out += x[..., i::p, j::p]
        out *= 1.0 / (p * p)
        return out

    def backward(self, g, out, x):
        p = self.size
        gx = np.empty_like(x)
        gp = g * (1.0 / (p * p))
        for i in range(p):
            for j in range(p):
                gx[..., i::p, j::p] = gp
        return (gx,)


class Interp(Op):
    """Linear interpolation along axis 0 at fractional frame positions."""

    name = "interp"

    def __init__(self, positions):
        self.positions = np.asarray(positions, dtype=np.float64)

    def _weights(self, t_in):
        pos = self.positions
        if t_in == 1:
            return np.zeros(len(pos), dtype=np.int64), np.zeros(len(pos))
        lo = np.clip(np.floor(pos).astype(np.int64), 0, t_in - 2)
        return lo, pos - lo

    def forward(self, x):
        lo, frac = self._weights(x.shape[0])
        if x.shape[0] == 1:
            return np.repeat(x, len(lo), axis=0)
        shape = (-1,) + (1,) * (x.ndim - 1)
        frac = frac.reshape(shape).astype(x.dtype)
        return (1 - frac) * x[lo] + frac * x[lo + 1]

    def backward(self, g, out, x):
        lo, frac = self._weights(x.shape[0])
        gx = np.zeros_like(x)
        if x.shape[0] == 1:
            gx[0] = g.sum(axis=0)
            return (gx,)
        shape = (-1,) + (1,) * (x.ndim - 1)
        frac = frac.reshape(shape).astype(g.dtype)
        np.add.at(gx, lo, (1 - frac) * g)
        np.add.at(gx, lo + 1, frac * g)
        return (gx,)


class SoftmaxCrossEntropy(Op):
    """Mean softmax cross-entropy of ``[B][N]`` logits against integer labels."""

    name = "softmax_cross_entropy"

    def __init__(self, labels):
        self.labels = np.asarray(labels, dtype=np.int64)

    def _probs(self, logits):
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return z, e / e.sum(axis=1, keepdims=True)

    def forward(self, logits):
        if logits.ndim != 2 or logits.shape[0] != len(self.labels):
            raise ShapeError(f"{self.name}: shape mismatch {logits.shape} vs {self.labels.shape}")
        z, _ = self._probs(logits)
        logz = np.log(np.exp(z).sum(axis=1))
        rows = np.arange(len(self.labels))
        return np.mean(logz - z[rows, self.labels])

    def backward(self, g, out, logits):
        _, p = self._probs(logits)
        p[np.arange(len(self.labels)), self.labels] -= 1
        return (g * p / len(self.labels),)


# -- shape plumbing ---------------------------------------------------------

class Reshape(Op):
    name = "reshape"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, a):
        try:
            return a.reshape(self.shape)
        except ValueError:
            raise ShapeError(f"{self.name}: shape mismatch {a.shape} vs {self.shape}") from None

    def backward(self, g, out, a):
        return (g.reshape(a.shape),)


class Transpose(Op):
    name = "transpose"

    def __init__(self, axes):
        self.axes = tuple(axes)

    def forward(self, a):
        return a.transpose(self.axes)

    def backward(self, g, out, a):
        return (g.transpose(np.argsort(self.axes)),)


class Slice(Op):
    """``a[start:stop]`` along axis 0."""

    name = "slice"

    def __init__(self, start: int, stop: int):
        self.start, self.stop = start, stop

    def forward(self, a):
        if not 0 <= self.start < self.stop <= a.shape[0]:
            raise ShapeError(f"{self.name}: range [{self.start}, {self.stop}) outside {a.shape}")
        return a[self.start:self.stop]

    def backward(self, g, out, a):
        ga = np.zeros_like(a)
        ga[self.start:self.stop] = g
        return (ga,)


class Concat(Op):
    name = "concat"

    def __init__(self, axis: int = 0):
        self.axis = axis

    def forward(self, *xs):
        try:
            return np.concatenate(xs, axis=self.axis)
        except ValueError:
            raise ShapeError(f"{self.name}: shape mismatch {[x.shape for x in xs]}") from None

    def backward(self, g, out, *xs):
        cuts = np.cumsum([x.shape[self.axis] for x in xs])[:-1]
        return tuple(np.split(g, cuts, axis=self.axis))


# -- functional front end ---------------------------------------------------

def add(a, b) -> Node:
    return _apply(Add(), a, b)


def sub(a, b) -> Node:
    return _apply(Sub(), a, b)


def mul(a, b) -> Node:
    return _apply(Mul(), a, b)


def scale(a, c: float) -> Node:
    return _apply(Scale(c), a)


def relu(a) -> Node:
    return _apply(Relu(), a)


def add_bias(x, b, axis: int) -> Node:
    return _apply(AddBias(axis), x, b)


def sum_(a, axis=None) -> Node:
    return _apply(Sum(axis), a)


def mean(a, axis=None) -> Node:
    return _apply(Mean(axis), a)


def squared_l2(a) -> Node:
    return _apply(SquaredL2(), a)


def l2_normalize(a) -> Node:
    return _apply(L2Normalize(), a)


def matmul(a, b) -> Node:
    return _apply(MatMul(), a, b)


def conv3d(x, w, b) -> Node:
    return _apply(Conv3d(), x, w, b)


def temporal_conv1d(x, kernel, bias, stride: int = 1) -> Node:
    return _apply(TemporalConv1d(stride), x, kernel, bias)


def avg_pool(x, size: int) -> Node:
    return _apply(AvgPool2d(size), x)


def interp(x, positions) -> Node:
    return _apply(Interp(positions), x)


def resample_positions(t_in: int, t_out: int) -> np.ndarray:
    """Frame positions ``t * (t_in - 1) / (t_out - 1)`` for ``t < t_out``."""
    if t_in < 1 or t_out < 1:
        raise ValueError("frame counts must be >= 1")
    if t_out == 1:
        return np.zeros(1)
    return np.arange(t_out) * (t_in - 1) / (t_out - 1)


def resample(x, t_out: int) -> Node:
    x = _as_node(x)
    if x.shape[0] == t_out:
        return x
    return interp(x, resample_positions(x.shape[0], t_out))


def softmax_cross_entropy(logits, labels) -> Node:
    return _apply(SoftmaxCrossEntropy(labels), logits)


def reshape(a, shape) -> Node:
    return _apply(Reshape(shape), a)


def transpose(a, axes) -> Node:
    return _apply(Transpose(axes), a)


def slice_(a, start: int, stop: int) -> Node:
    return _apply(Slice(start, stop), a)


def concat(xs, axis: int = 0) -> Node:
    return _apply(Concat(axis), *xs)


# -- graph evaluation -------------------------------------------------------

def topological_order(root: Node) -> list[Node]:
    """Every node reachable from ``root``, inputs before consumers.

    Nodes are created after their inputs, so sorting by creation index is a
    valid order with a stable tie-break.
    """
    seen = {id(root): root}
    stack = [root]
    while stack:
        node = stack.pop()
        for parent in node.inputs:
            if id(parent) not in seen:
                seen[id(parent)] = parent
                stack.append(parent)
    return sorted(seen.values(), key=lambda n: n.index)


def forward(root: Node):
    """Recompute every non-leaf value from the current leaf values."""
    for node in topological_order(root):
        if node.op is not None:
            node.value = node.op.forward(*(p.value for p in node.inputs))
    return root.value


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for learnable leaves."""
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    order = topological_order(root)
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.op is None:
            node.grad = g
            continue
        node.op.need = tuple(p.requires_grad for p in node.inputs)
        parts = node.op.backward(g, node.value, *(p.value for p in node.inputs))
        for parent, gp in zip(node.inputs, parts):
            if gp is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = gp if key not in grads else grads[key] + gp


def zero_grad(*nodes: Node) -> None:
    for n in nodes:
        n.grad = None


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad
