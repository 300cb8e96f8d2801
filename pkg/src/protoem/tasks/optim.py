import numpy as np


class AdamW:
    """Adam with decoupled weight decay on a module's named parameters.

    Decay applies to tensors named ``*.weight`` only.
    """

    def __init__(self, module, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.module = module
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, grads):
        """Apply one update from a ``name -> gradient`` mapping."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        new = {}
        for name, p in self.module.named_parameters().items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.b1 * m + (1.0 - self.b1) * g
            v = self.b2 * v + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            w = p.data
            if self.weight_decay and name.endswith("weight"):
                w = w - self.lr * self.weight_decay * w
            new[name] = w - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.module.load_state(new, strict=False)
