"""Immutable fp64 tensors and a reverse-mode gradient tape.

Operations are plain functions that return new :class:`Tensor` objects. When a
:class:`Tape` is active on the current thread and one of the inputs is watched
by it, the operation is recorded together with its adjoint rule.
"""
import math
import threading

import numpy as np

from .kernels import fixed_matmul


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class ContractError(ValueError):
    """Raised when an input violates an operation's precondition."""


class Tensor:
    """Dense row-major fp64 array. Values are frozen after construction."""

    __slots__ = ("data", "requires_grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64, copy=True)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad

    @classmethod
    def _wrap(cls, arr):
        # internal fast path: arr is a fresh float64 array owned by the op
        if type(arr) is not np.ndarray:
            arr = np.array(arr, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = False
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations on the current thread for reverse-mode gradients.

    Usage::

        with Tape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self._records = []
        self._produced = set()
        self._keep = []

    def __enter__(self):
        _active().append(self)
        return self

    def __exit__(self, *exc):
        _active().remove(self)
        return False

    def watches(self, t):
        return t.requires_grad or id(t) in self._produced

    def record(self, out, inputs, backward):
        self._records.append((out, inputs, backward))
        self._produced.add(id(out))
        self._keep.append(out)

    def gradient(self, loss, sources):
        """Gradients of scalar ``loss`` w.r.t. each tensor in ``sources``.

        Sources that did not take part in computing ``loss`` get zeros.
        """
        if loss.data.size != 1:
            raise ContractError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            with np.errstate(all="ignore"):  # non-finite results are rejected below
                in_grads = backward(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not self.watches(t):
                    continue
                if gi.shape != t.shape:
                    gi = _unbroadcast(gi, t.shape)
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        result = []
        for s in sources:
            g = grads.get(id(s))
            if g is None:
                g = np.zeros_like(s.data)
            elif not np.isfinite(g).all():
                raise NonFiniteError("non-finite gradient")
            result.append(g)
        return result


_state = threading.local()


def _active():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _make(arr, inputs, backward):
    out = Tensor._wrap(arr)
    tapes = _active()
    if tapes:
        tape = tapes[-1]
        if any(tape.watches(t) for t in inputs):
            tape.record(out, inputs, backward)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(all="ignore"):
        out = ad / bd
    return _make(out, (a, b), lambda g: (g / bd, -g * out / bd))


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _make(out, (x,), lambda g: (g / xd,))


def sqrt(x):
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (0.5 * g / out,))


def square(x):
    x = as_tensor(x)
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def abs_(x):
    x = as_tensor(x)
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """Tanh-approximated GELU."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    th = np.tanh(inner)
    out = 0.5 * xd * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th ** 2) * dinner),)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape


def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape
    return _make(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None):
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def slice_axis(x, start, stop, axis=0):
    """``x[start:stop]`` along ``axis``."""
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    src = x.shape

    def backward(g):
        full = np.zeros(src)
        full[idx] = g
        return (full,)

    return _make(x.data[idx].copy(), (x,), backward)


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(xs), backward)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    src = x.shape
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# linear algebra and normalisation


def matmul(a, b):
    """Product with fixed left-to-right accumulation over the inner axis."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ContractError(f"matmul dimension mismatch: {ad.shape} x {bd.shape}")
    out = fixed_matmul(ad, bd)

    def backward(g):
        ga = fixed_matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2:
            k = ad.shape[-1]
            gb = fixed_matmul(ad.reshape(-1, k).T, g.reshape(-1, g.shape[-1]))
        else:
            gb = fixed_matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _make(out, (a, b), backward)


def softmax_axis(x, axis=-1):
    """Softmax along ``axis`` with max subtraction."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"axis {axis} out of range for rank {x.ndim}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def masked_softmax(x, mask, axis=-1):
    """Softmax along ``axis`` restricted to entries where ``mask`` is true.

    Masked entries behave as logits of minus infinity and come out exactly 0.
    Every slice must allow at least one entry.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise ContractError("masked softmax slice with every position masked")
    xm = np.where(mask, x.data, -np.inf)
    z = xm - xm.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def layer_norm(x, gain, shift, eps=1e-5):
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ContractError(f"layer_norm affine shape {gain.shape}/{shift.shape} vs D={d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + shift.data

    def backward(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(out, (x, gain, shift), backward)
