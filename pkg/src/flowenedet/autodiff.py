"""Minimal reverse-mode automatic differentiation over numpy arrays.

The training path needs exact gradients of a composite loss through
convolutions, elementwise nonlinearities and reductions, without pulling a
deep-learning framework into the package. This module provides a small
tape: `Var` wraps a float64 ndarray, records its parents and their
vector-Jacobian products, and `backward` walks the graph in reverse
topological order.

Only the operations the detector needs are implemented. All math is 64-bit.
"""

import numpy as np


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A node in the computation graph: a value plus how to backpropagate."""

    __slots__ = ("value", "grad", "requires_grad", "_parents")

    def __init__(self, value, parents=(), requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = tuple(p for p in parents if p[0].requires_grad)
        if requires_grad is None:
            requires_grad = bool(self._parents)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += _unbroadcast(np.asarray(grad, dtype=np.float64), self.value.shape)

    def backward(self):
        """Backpropagate from this (scalar) node through the whole tape."""
        if self.value.ndim != 0:
            raise ValueError("backward requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for parent, _ in node._parents:
                    if id(parent) not in seen:
                        stack.append((parent, False))
        self._accumulate(np.ones_like(self.value))
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                parent._accumulate(vjp(node.grad))

    # arithmetic

    def __add__(self, other):
        other = as_var(other)
        return Var(
            self.value + other.value,
            parents=((self, lambda g: g), (other, lambda g: g)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, parents=((self, lambda g: -g),))

    def __sub__(self, other):
        return self + (-as_var(other))

    def __rsub__(self, other):
        return as_var(other) + (-self)

    def __mul__(self, other):
        other = as_var(other)
        return Var(
            self.value * other.value,
            parents=(
                (self, lambda g: g * other.value),
                (other, lambda g: g * self.value),
            ),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_var(other)
        return Var(
            self.value / other.value,
            parents=(
                (self, lambda g: g / other.value),
                (other, lambda g: -g * self.value / (other.value * other.value)),
            ),
        )

    def __getitem__(self, idx):
        def vjp(g):
            out = np.zeros_like(self.value)
            out[idx] = g
            return out

        return Var(self.value[idx], parents=((self, vjp),))


def as_var(x):
    return x if isinstance(x, Var) else Var(x, requires_grad=False)


def reshape(x, shape):
    x = as_var(x)
    return Var(x.value.reshape(shape), parents=((x, lambda g: g.reshape(x.value.shape)),))


def exp(x):
    x = as_var(x)
    out = np.exp(x.value)
    return Var(out, parents=((x, lambda g: g * out),))


def log(x):
    x = as_var(x)
    return Var(np.log(x.value), parents=((x, lambda g: g / x.value),))


def _sigmoid(x):
    # exp(-softplus(-x)): stable on both tails
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(x):
    x = as_var(x)
    out = _sigmoid(x.value)
    return Var(out, parents=((x, lambda g: g * out * (1.0 - out)),))


def softplus(x):
    x = as_var(x)
    out = np.logaddexp(0.0, x.value)
    return Var(out, parents=((x, lambda g: g * _sigmoid(x.value)),))


def square(x):
    x = as_var(x)
    return Var(x.value * x.value, parents=((x, lambda g: 2.0 * g * x.value),))


def concat(vars_, axis):
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.value.shape[axis] for v in vars_]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sel = [slice(None)] * vars_[i].value.ndim
        sel[axis] = slice(offsets[i], offsets[i + 1])
        sel = tuple(sel)
        return lambda g: g[sel]

    return Var(
        np.concatenate([v.value for v in vars_], axis=axis),
        parents=tuple((v, make_vjp(i)) for i, v in enumerate(vars_)),
    )


def sum_(x, axis=None, keepdims=False):
    x = as_var(x)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.value.shape)
        grad = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(grad, x.value.shape)

    return Var(x.value.sum(axis=axis, keepdims=keepdims), parents=((x, vjp),))


def mean(x, axis=None, keepdims=False):
    x = as_var(x)
    count = x.value.size if axis is None else x.value.shape[axis]
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def logsumexp(x, axis):
    """Stable log-sum-exp reduction; vjp is the softmax along `axis`."""
    x = as_var(x)
    m = np.max(x.value, axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x.value - m), axis=axis))
    soft = np.exp(x.value - np.expand_dims(out, axis))

    def vjp(g):
        return np.expand_dims(g, axis) * soft

    return Var(out, parents=((x, vjp),))


def conv2d(x, weight, bias, padding):
    """2D convolution, stride 1, zero padding, via im2col + matmul.

    x: (N, Cin, H, W) Var or array; weight: (Cout, Cin, K, K) Var;
    bias: (Cout,) Var or None. Output (N, Cout, H, W) with H, W preserved
    when padding = K // 2.
    """
    x = as_var(x)
    weight = as_var(weight)
    n, cin, h, w = x.value.shape
    cout, cin_w, kh, kw = weight.value.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {cin_w}")

    if kh == 1 and kw == 1:
        # 1x1 fast path: plain channel matmul per pixel
        wmat = weight.value.reshape(cout, cin)
        out = np.einsum("oc,nchw->nohw", wmat, x.value, optimize=True)

        def vjp_x(g):
            return np.einsum("oc,nohw->nchw", wmat, g, optimize=True)

        def vjp_w(g):
            return np.einsum("nohw,nchw->oc", g, x.value, optimize=True).reshape(weight.value.shape)

        parents = [(x, vjp_x), (weight, vjp_w)]
    else:
        pad = padding
        xpad = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        oh, ow = h + 2 * pad - kh + 1, w + 2 * pad - kw + 1
        # patches: (N, Cin, KH, KW, OH, OW) as a strided view, no copy
        sn, sc, sh, sw = xpad.strides
        patches = np.lib.stride_tricks.as_strided(
            xpad,
            shape=(n, cin, kh, kw, oh, ow),
            strides=(sn, sc, sh, sw, sh, sw),
            writeable=False,
        )
        out = np.einsum("ocij,ncijhw->nohw", weight.value, patches, optimize=True)

        def vjp_x(g):
            dpatches = np.einsum("ocij,nohw->ncijhw", weight.value, g, optimize=True)
            dxpad = np.zeros_like(xpad)
            for i in range(kh):
                for j in range(kw):
                    dxpad[:, :, i : i + oh, j : j + ow] += dpatches[:, :, i, j]
            if pad:
                return dxpad[:, :, pad:-pad, pad:-pad]
            return dxpad

        def vjp_w(g):
            return np.einsum("nohw,ncijhw->ocij", g, patches, optimize=True)

        parents = [(x, vjp_x), (weight, vjp_w)]

    if bias is not None:
        bias = as_var(bias)
        out = out + bias.value[None, :, None, None]
        parents.append((bias, lambda g: g.sum(axis=(0, 2, 3))))
    return Var(out, parents=tuple(parents))
