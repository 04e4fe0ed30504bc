"""
Dense float64 tensors with reverse-mode differentiation.

Every primitive below records, on the tensor it returns, the operands it
consumed and a closure that maps the output gradient to operand gradients.
:func:`backward` walks that record once in reverse topological order and
then drops it, so a graph never outlives the batch that produced it.

Leaf tensors created with ``requires_grad=True`` own a ``grad`` array that
gradients are *added* into; zeroing them is the optimizer's job.
"""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, ShapeError, UsageError

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "add_scalar",
    "sum_all",
    "relu",
    "gelu",
    "dense",
    "conv2d",
    "conv_output_size",
    "batchnorm2d",
    "layernorm",
    "global_avg_pool",
    "flatten",
    "reshape",
    "transpose",
    "softmax_cross_entropy",
]

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array, optionally tracking gradients.

    Tensors produced by operations are read-only. Leaf tensors (parameters)
    stay writable so optimizers can update them in place.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    @property
    def has_graph(self) -> bool:
        return self._backward is not None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    data = np.ascontiguousarray(data, dtype=np.float64)
    data.flags.writeable = False
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = fn
    else:
        out._parents = ()
        out._backward = None
    return out


class Graph:
    """The recorded computation behind one output, in topological order."""

    def __init__(self, output: Tensor):
        if output._backward is None:
            raise UsageError(
                "backward() called on a tensor with no recorded graph "
                "(a leaf, a constant, or a graph already consumed)"
            )
        self.output = output
        self.nodes = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return order

    def run(self, seed: np.ndarray):
        grads = {id(self.output): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is not None:
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in self.nodes:
            node._parents = ()
            node._backward = None


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every participating leaf's ``grad``."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    Graph(loss).run(np.ones_like(loss.data))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def _bw(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), _bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape

    def _bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), _bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data

    def _bw(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return _result(A * B, (a, b), _bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _result(a.data + float(c), (a,), lambda g: (g,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _bw(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), _bw)


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    X = x.data
    cdf = 0.5 * (1.0 + erf(X * _SQRT1_2))

    def _bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * X * X)
        return (g * (cdf + X * pdf),)

    return _result(X * cdf, (x,), _bw)


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    X, W = x.data, weight.data
    out = X @ W.T
    if bias is not None:
        out = out + bias.data

    def _bw(g):
        grads = [g @ W, g.T @ X]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, _bw)


# ---------------------------------------------------------------------------
# convolution and normalization
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if stride < 1 or span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: (size {size} + 2*padding {padding} - kernel {kernel}) "
            f"is not a non-negative multiple of stride {stride}"
        )
    return span // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an (N, C_in, H, W) input with a
    (C_out, C_in, kh, kw) kernel. No bias, no kernel flip."""
    if x.data.ndim != 4 or kernel.data.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    N, C, H, W = x.shape
    _, _, kh, kw = kernel.shape
    Ho = conv_output_size(H, kh, stride, padding)
    Wo = conv_output_size(W, kw, stride, padding)
    X = x.data
    if padding:
        X = np.pad(X, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(X, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    K = kernel.data
    out = np.tensordot(windows, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    padded_shape = X.shape

    def _bw(g):
        dK = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        dwin = np.tensordot(g, K, axes=([1], [0]))  # N, Ho, Wo, C, kh, kw
        dX = np.zeros(padded_shape)
        for i in range(kh):
            for j in range(kw):
                dX[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                    dwin[..., i, j].transpose(0, 3, 1, 2)
                )
        if padding:
            dX = dX[:, :, padding:-padding, padding:-padding]
        return dX, dK

    return _result(out, (x, kernel), _bw)


def _data(t):
    return t.data if isinstance(t, Tensor) else t


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean,
    running_var,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch normalization over the channel axis of (N, C, H, W) or (N, C).

    In training mode the running buffers are updated in place with an
    exponential moving average (unbiased batch variance, as in PyTorch).
    """
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batchnorm2d: expected 2-D or 4-D input, got {x.shape}")
    N, C = x.shape[:2]
    if N == 0:
        raise ShapeError("batchnorm2d: zero batch size")
    rm, rv = _data(running_mean), _data(running_var)
    for label, t in (("gamma", gamma.data), ("beta", beta.data), ("running_mean", rm), ("running_var", rv)):
        if t.shape != (C,):
            raise ShapeError(f"batchnorm2d: {label} shape {t.shape} does not match {C} channels")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    bshape = (1, C) if x.data.ndim == 2 else (1, C, 1, 1)
    X = x.data
    n = X.size // C
    if training:
        mean = X.mean(axis=axes)
        centered = X - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        rm *= 1.0 - momentum
        rm += momentum * mean
        unbiased = var * (n / (n - 1)) if n > 1 else var
        rv *= 1.0 - momentum
        rv += momentum * unbiased
    else:
        mean, var = rm.copy(), rv.copy()
        centered = X - mean.reshape(bshape)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * invstd.reshape(bshape)
    G = gamma.data.reshape(bshape)
    out = xhat * G + beta.data.reshape(bshape)

    def _bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * G
        if training:
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            dx = (invstd.reshape(bshape) / n) * (n * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * invstd.reshape(bshape)
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), _bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply a per-feature affine map."""
    D = x.shape[-1]
    if gamma.shape != (D,) or beta.shape != (D,):
        raise ShapeError(f"layernorm: affine shapes {gamma.shape}/{beta.shape} vs feature size {D}")
    X = x.data
    mean = X.mean(axis=-1, keepdims=True)
    centered = X - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * invstd
    out = xhat * gamma.data + beta.data
    lead = tuple(range(X.ndim - 1))

    def _bw(g):
        dxhat = g * gamma.data
        s1 = dxhat.sum(axis=-1, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
        dx = (invstd / D) * (D * dxhat - s1 - xhat * s2)
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), _bw)


# ---------------------------------------------------------------------------
# shape plumbing, pooling, loss
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected (N, C, H, W), got {x.shape}")
    N, C, H, W = x.shape
    area = H * W

    def _bw(g):
        return (np.broadcast_to((g / area)[:, :, None, None], (N, C, H, W)).copy(),)

    return _result(x.data.mean(axis=(2, 3)), (x,), _bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got {x.shape}")
    return _result(x.data.T, (x,), lambda g: (g.T,))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    Z = logits.data
    y = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {Z.shape} vs labels {y.shape}")
    if Z.shape[0] == 0:
        raise ShapeError("softmax_cross_entropy: empty batch")
    if y.min() < 0 or y.max() >= Z.shape[1]:
        raise ShapeError(f"softmax_cross_entropy: labels outside [0, {Z.shape[1]})")
    N = Z.shape[0]
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(N)
    loss = -logp[rows, y].mean()

    def _bw(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (p * (g / N),)

    return _result(np.asarray(loss), (logits,), _bw)
