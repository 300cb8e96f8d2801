"""Cross-attention prototyping: EM clustering of tokens written as attention.

Each iteration takes a softmax over the prototype axis of prototype-query /
token-key logits (the soft assignment), then moves every prototype by the
assignment-weighted mean of the token values. Keys and values are projected
once per call; only the prototype queries are re-projected per iteration.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import ContractError, Linear, Module, Tensor, mac_tag


@dataclass
class TokenGrid:
    features: Tensor  # (..., T, D)
    height: int
    width: int

    def __post_init__(self):
        if not isinstance(self.features, Tensor):
            self.features = Tensor(self.features)
        if self.height * self.width != self.features.shape[-2]:
            raise ContractError(
                f"grid {self.height}x{self.width} does not match {self.features.shape[-2]} tokens")

    @property
    def T(self):
        return self.features.shape[-2]

    @property
    def D(self):
        return self.features.shape[-1]


@dataclass
class PrototypeSet:
    P: Tensor  # (..., K, D)
    provenance: str = "initial"

    @property
    def K(self):
        return self.P.shape[-2]


@dataclass
class SoftAssignment:
    M: Tensor  # (..., K, T); columns sum to 1

    @property
    def data(self):
        return self.M.data


def _bins(n_in, n_out):
    return [(math.floor(i * n_in / n_out), math.ceil((i + 1) * n_in / n_out)) for i in range(n_out)]


def pooling_matrix(height, width, k):
    """(K, H*W) averaging weights for the first K cells of an adaptive grid.

    The grid has ``kh = ceil(sqrt(K))`` rows and ``kw = ceil(K / kh)`` columns
    with the usual adaptive-pooling bin edges; cells are taken row-major.
    """
    kh = math.ceil(math.sqrt(k))
    kw = math.ceil(k / kh)
    pool = np.zeros((k, height * width))
    cells = [(r, c) for r in _bins(height, kh) for c in _bins(width, kw)][:k]
    for idx, ((r0, r1), (c0, c1)) in enumerate(cells):
        count = (r1 - r0) * (c1 - c0)
        for r in range(r0, r1):
            pool[idx, r * width + c0:r * width + c1] = 1.0 / count
    return pool


def init_prototypes(tokens, k):
    """Initial prototypes by adaptive average pooling over the token grid."""
    if k < 1 or k > tokens.T:
        raise ContractError(f"need 1 <= K <= T, got K={k}, T={tokens.T}")
    pool = pooling_matrix(tokens.height, tokens.width, k)
    with mac_tag("pool"):
        return PrototypeSet(nx.matmul(pool, tokens.features), "initial")


def em_attention_step(q, k, v, heads=1, temperature=None):
    """One E/M step on projected tensors.

    ``q`` is (..., K, D); ``k`` and ``v`` are (..., T, D). Returns the new
    prototypes (..., K, D) and the head-averaged assignment (..., K, T).
    """
    d = q.shape[-1]
    if d % heads:
        raise ContractError(f"D={d} not divisible by {heads} heads")
    dh = d // heads
    tau = math.sqrt(dh) if temperature is None else temperature
    if heads == 1:
        qh, kh, vh = q, k, v
    else:
        qh = _split_heads(q, heads)
        kh = _split_heads(k, heads)
        vh = _split_heads(v, heads)
    with mac_tag("iter"):
        logits = nx.matmul(qh, nx.transpose(kh)) * (1.0 / tau)
    m = nx.softmax_axis(logits, axis=-2)
    # floor keeps a prototype with vanishing mass in place instead of dividing by 0
    mass = nx.sum_(m, axis=-1, keepdims=True) + 1e-300
    with mac_tag("iter"):
        out = nx.matmul(m / mass, vh)
    if heads > 1:
        out = _merge_heads(out)
        m = nx.mean(m, axis=-3)
    return out, m


def _split_heads(x, heads):
    *lead, n, d = x.shape
    x = nx.reshape(x, tuple(lead) + (n, heads, d // heads))
    r = len(lead)
    return nx.transpose(x, tuple(range(r)) + (r + 1, r, r + 2))


def _merge_heads(x):
    *lead, h, n, dh = x.shape
    r = len(lead)
    x = nx.transpose(x, tuple(range(r)) + (r + 1, r, r + 2))
    return nx.reshape(x, tuple(lead) + (n, h * dh))


class PrototypingLayer(Module):
    """Query projection for prototypes, key/value projections for tokens."""

    def __init__(self, d, rng=None, heads=1, temperature=None, init="xavier"):
        super().__init__()
        self.heads = heads
        self.temperature = temperature
        self.q = self.child("q", Linear(d, d, rng, init))
        self.k = self.child("k", Linear(d, d, rng, init))
        self.v = self.child("v", Linear(d, d, rng, init))

    def __call__(self, tokens, k, n_iters, p0=None):
        return cross_attention_prototyping(tokens, k, n_iters, self, p0=p0)


def prototyping_step(protos, tokens, proj, kv=None):
    """One E/M step: returns ``(new prototypes, soft assignment)``.

    The returned prototypes are the assignment-weighted means of the token
    values (no residual). ``kv`` reuses already projected keys and values.
    """
    heads = getattr(proj, "heads", 1)
    temperature = getattr(proj, "temperature", None)
    if kv is None:
        with mac_tag("proj"):
            kv = (proj.k(tokens.features), proj.v(tokens.features))
    with mac_tag("proj"):
        q = proj.q(protos.P)
    new, m = em_attention_step(q, kv[0], kv[1], heads, temperature)
    return PrototypeSet(new, "step"), SoftAssignment(m)


def cross_attention_prototyping(tokens, k, n_iters, proj, p0=None):
    """N residual E/M iterations starting from pooled (or supplied) prototypes.

    Returns the final prototypes and the assignment of the last iteration.
    """
    if n_iters < 1:
        raise ContractError("need at least one iteration")
    protos = init_prototypes(tokens, k) if p0 is None else p0
    if not isinstance(protos, PrototypeSet):
        protos = PrototypeSet(nx.as_tensor(protos), "initial")
    with mac_tag("proj"):
        kv = (proj.k(tokens.features), proj.v(tokens.features))
    m = None
    for n in range(n_iters):
        step, m = prototyping_step(protos, tokens, proj, kv=kv)
        protos = PrototypeSet(protos.P + step.P, f"iterated({n + 1})")
    return protos, m


def assignment_entropy(assign):
    """Per-token entropy of the prototype distribution, in nats."""
    m = assign.data if isinstance(assign, SoftAssignment) else np.asarray(
        assign.data if isinstance(assign, Tensor) else assign)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(m > 0, -m * np.log(m), 0.0)
    return terms.sum(axis=-2)
