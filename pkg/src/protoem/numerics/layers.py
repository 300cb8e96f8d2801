"""Trainable building blocks: linear maps, layer norm and the feed-forward network."""
import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Holds named trainable tensors and child modules."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, value):
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = {}
        for name, t in self._params.items():
            out[prefix + name] = t
        for name, mod in self._children.items():
            out.update(mod.named_parameters(prefix + name + "."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return sum(t.data.size for t in self.parameters())

    def load_state(self, state, strict=True):
        """Replace parameter values from a ``name -> array`` mapping."""
        own = self.named_parameters()
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing}")
        for name, t in own.items():
            if name in state:
                self._replace(name, np.asarray(state[name], dtype=np.float64))

    def _replace(self, dotted, value):
        head, _, rest = dotted.partition(".")
        if rest and head in self._children:
            self._children[head]._replace(rest, value)
            return
        old = self._params[dotted]
        if old.shape != value.shape:
            raise ValueError(f"shape mismatch for {dotted}: {old.shape} vs {value.shape}")
        self._params[dotted] = Tensor(value, requires_grad=True)
        setattr(self, dotted, self._params[dotted])


class Linear(Module):
    """``y = x W + b`` with W of shape (d_in, d_out)."""

    def __init__(self, d_in, d_out, rng=None, init="xavier", bias=True):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        if init == "identity":
            w = np.eye(d_in, d_out)
        elif init == "zeros" or rng is None:
            w = np.zeros((d_in, d_out))
        else:
            lim = math.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-lim, lim, size=(d_in, d_out))
        self.weight = self.param("weight", w)
        self.bias = self.param("bias", np.zeros(d_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gain = self.param("gain", np.ones(d))
        self.shift = self.param("shift", np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.shift, self.eps)


class FFN(Module):
    """Two linear maps with a GELU between them, hidden width ``ratio * d``."""

    def __init__(self, d, rng=None, ratio=4, init="xavier"):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(d, ratio * d, rng, init))
        self.fc2 = self.child("fc2", Linear(ratio * d, d, rng, init))

    def __call__(self, x):
        return self.fc2(T.gelu(self.fc1(x)))


def ffn(x, params):
    """Functional form of :class:`FFN` taking ``(w1, b1, w2, b2)``."""
    w1, b1, w2, b2 = params
    return T.matmul(T.gelu(T.matmul(x, w1) + b1), w2) + b2
