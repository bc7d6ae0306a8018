"""Reverse-mode automatic differentiation over dense numpy arrays.

A minimal tape: every non-leaf Tensor keeps references to its parents and a
closure that routes the incoming gradient to them. ``Tensor.backward()``
walks the graph once in reverse topological order and accumulates gradients
(sum over paths) into every tensor that requires them, then frees the tape.

Everything is float64. The only non-standard op is ``spike_threshold``,
whose forward is a hard 0/1 step and whose backward substitutes a smooth
bounded surrogate derivative.
"""

import numpy as np


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform for an op."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @classmethod
    def _make(cls, data, parents, backward):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward pass -----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every reachable tensor.

        self must be scalar (size 1). The tape is freed afterwards; a second
        backward needs a fresh forward pass.
        """
        if self.data.size != 1:
            raise ShapeMismatchError(
                f"backward() requires a scalar loss, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        # free the tape; leaf .grad survives
        for node in topo:
            node._parents = ()
            node._backward = None

    def _accum(self, g):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            self.grad += g

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out_data = self.data + other.data

        def back(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))
        return Tensor._make(out_data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        def back(g):
            self._accum(-g)
        return Tensor._make(-self.data, (self,), back)

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        out_data = self.data * other.data

        def back(g):
            self._accum(_unbroadcast(g * other.data, self.shape))
            other._accum(_unbroadcast(g * self.data, other.shape))
        return Tensor._make(out_data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        out_data = self.data / other.data

        def back(g):
            self._accum(_unbroadcast(g / other.data, self.shape))
            other._accum(_unbroadcast(-g * self.data / other.data ** 2,
                                      other.shape))
        return Tensor._make(out_data, (self, other), back)

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, p):
        p = float(p)
        out_data = self.data ** p

        def back(g):
            self._accum(g * p * self.data ** (p - 1.0))
        return Tensor._make(out_data, (self,), back)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def back(g):
            self._accum(g * 0.5 / out_data)
        return Tensor._make(out_data, (self,), back)

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._accum(g * out_data)
        return Tensor._make(out_data, (self,), back)

    def log(self):
        def back(g):
            self._accum(g / self.data)
        return Tensor._make(np.log(self.data), (self,), back)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.shape

        def back(g):
            self._accum(g.reshape(in_shape))
        return Tensor._make(self.data.reshape(shape), (self,), back)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)

        def back(g):
            self._accum(g.transpose(inv))
        return Tensor._make(self.data.transpose(axes), (self,), back)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)
        out = Tensor._make(np.array(out_data, dtype=np.float64), (self,), back)
        return out

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.shape

        def back(g):
            if axis is None:
                self._accum(np.broadcast_to(g, in_shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, in_shape).copy())
        return Tensor._make(out_data, (self,), back)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- linear algebra -----------------------------------------------------------

    def __matmul__(self, other):
        other = _lift(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeMismatchError(
                f"matmul expects 2D operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeMismatchError(
                f"matmul inner dims differ: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def back(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)
        return Tensor._make(out_data, (self, other), back)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def stack(tensors, axis=0):
    """Stack same-shape tensors along a new axis."""
    tensors = [_lift(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        pieces = np.split(g, len(tensors), axis=axis)
        for t, piece in zip(tensors, pieces):
            t._accum(np.squeeze(piece, axis=axis))
    return Tensor._make(out_data, tuple(tensors), back)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece)
    return Tensor._make(out_data, tuple(tensors), back)


# ---------------------------------------------------------------------------
# Convolution and pooling (NCHW, im2col)
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, stride, padding):
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (x.shape[2] - kh) // stride + 1
    ow = (x.shape[3] - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]             # (B,C,OH,OW,KH,KW)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(gcols, x_shape, kh, kw, stride, padding, oh, ow):
    b, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    gx = np.zeros((b, c, hp, wp))
    gcols = gcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                gcols[:, :, :, :, i, j]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2D convolution. x: (B,C,H,W), weight: (OC,C,KH,KW), bias: (OC,)."""
    x, weight = _lift(x), _lift(weight)
    if bias is not None:
        bias = _lift(bias)
    b, c, h, w = x.shape
    oc, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeMismatchError(
            f"conv2d kernel {weight.shape} does not fit padded input {x.shape}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(oc, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, oh, ow, oc).transpose(0, 3, 1, 2)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        weight._accum((gmat.T @ cols).reshape(weight.shape))
        x._accum(_col2im(gmat @ wmat, x.shape, kh, kw, stride, padding, oh, ow))
        if bias is not None:
            bias._accum(gmat.sum(axis=0))
    return Tensor._make(out, parents, back)


def avg_pool2d(x, k):
    """Non-overlapping k x k average pooling; H and W must divide by k."""
    x = _lift(x)
    b, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeMismatchError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    oh, ow = h // k, w // k
    blocks = x.data.reshape(b, c, oh, k, ow, k)
    out = blocks.mean(axis=(3, 5))

    def back(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        x._accum(gx)
    return Tensor._make(out, (x,), back)


# ---------------------------------------------------------------------------
# Classification heads
# ---------------------------------------------------------------------------

def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy between softmax(logits) (B,K) and int labels (B,)."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            f"cross-entropy shapes: logits {logits.shape}, labels {labels.shape}")
    n = logits.shape[0]
    p = _softmax(logits.data)
    losses = -np.log(p[np.arange(n), labels])
    out = losses.mean()

    def back(g):
        gl = p.copy()
        gl[np.arange(n), labels] -= 1.0
        logits._accum(g * gl / n)
    return Tensor._make(out, (logits,), back)


def log_softmax(logits):
    """Row-wise log softmax of (B,K) logits."""
    logits = _lift(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def back(g):
        logits._accum(g - p * g.sum(axis=1, keepdims=True))
    return Tensor._make(out, (logits,), back)


# ---------------------------------------------------------------------------
# Spike threshold with surrogate backward
# ---------------------------------------------------------------------------

SURROGATE_SLOPE = 2.0


def surrogate_derivative(x, a=SURROGATE_SLOPE):
    """Smooth stand-in derivative for the hard step, peak a/2 at x = 0."""
    return (a / 2.0) / (1.0 + (a * np.pi * x / 2.0) ** 2)


def surrogate_relaxation(x, a=SURROGATE_SLOPE):
    """Antiderivative of surrogate_derivative; a soft step through (0, 1/2)."""
    return 0.5 + np.arctan(a * np.pi * x / 2.0) / np.pi


def spike_threshold(u, v_th, smooth=False, a=SURROGATE_SLOPE):
    """Binary spikes: 1 where u >= v_th, else 0 (ties fire).

    Backward multiplies the incoming gradient by the surrogate derivative
    evaluated at u - v_th. With smooth=True the forward is replaced by the
    surrogate's exact antiderivative, making the op truly differentiable
    (used by gradient-check harnesses; training keeps the binary forward).
    """
    if v_th <= 0:
        raise ValueError(f"spike threshold must be positive, got {v_th}")
    u = _lift(u)
    x = u.data - v_th
    out = surrogate_relaxation(x, a) if smooth else (x >= 0.0).astype(np.float64)

    def back(g):
        u._accum(g * surrogate_derivative(x, a))
    return Tensor._make(out, (u,), back)
