"""Latent synchronization: tokens attend only to their hard-assigned prototype."""
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import FFN, ContractError, LayerNorm, Linear, Module
from .proto_attention import PrototypeSet, TokenGrid


@dataclass
class AssignmentMask:
    mask: np.ndarray  # (..., T, K) bool, exactly one True per row

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.mask.sum(axis=-1) == 1).all():
            raise ContractError("assignment mask rows must be one-hot")

    @property
    def index(self):
        return self.mask.argmax(axis=-1)


class LatentSync(Module):
    """Token-query / prototype-key-value projections plus the refinement FFN."""

    def __init__(self, d, rng=None, similarity="dot", norm=True, init="xavier"):
        super().__init__()
        if similarity not in ("dot", "cosine"):
            raise ValueError(f"unknown similarity {similarity!r}")
        self.similarity = similarity
        self.norm = self.child("norm", LayerNorm(d)) if norm else None
        self.q = self.child("q", Linear(d, d, rng, init))
        self.k = self.child("k", Linear(d, d, rng, init))
        self.v = self.child("v", Linear(d, d, rng, init))
        self.ffn = self.child("ffn", FFN(d, rng, init=init))

    def queries_source(self, tokens):
        x = tokens.features if isinstance(tokens, TokenGrid) else nx.as_tensor(tokens)
        return self.norm(x) if self.norm is not None else x

    def __call__(self, tokens, protos, mask=None):
        if mask is None:
            mask = build_assignment_mask(tokens, protos, self)
        return latent_synchronization(tokens, protos, mask, self)


def build_assignment_mask(tokens, protos, proj):
    """One-hot mask of each token's most similar prototype (lowest index on ties)."""
    h = proj.queries_source(tokens) if hasattr(proj, "queries_source") else tokens.features
    q = proj.q(h).data
    k = proj.k(protos.P).data
    if getattr(proj, "similarity", "dot") == "cosine":
        q = q / np.maximum(np.linalg.norm(q, axis=-1, keepdims=True), 1e-12)
        k = k / np.maximum(np.linalg.norm(k, axis=-1, keepdims=True), 1e-12)
        sim = nx.fixed_matmul(q, np.swapaxes(k, -1, -2))
    else:
        sim = nx.fixed_matmul(q, np.swapaxes(k, -1, -2)) / math.sqrt(q.shape[-1])
    idx = sim.argmax(axis=-1)
    mask = np.zeros(sim.shape, dtype=bool)
    np.put_along_axis(mask, idx[..., None], True, axis=-1)
    return AssignmentMask(mask)


def masked_prototype_attention(q, k, v, mask):
    """``softmax(q k^T / sqrt(D))`` restricted to the mask, applied to ``v``."""
    logits = nx.matmul(q, nx.transpose(k)) * (1.0 / math.sqrt(q.shape[-1]))
    attn = nx.masked_softmax(logits, mask.mask, axis=-1)
    return nx.matmul(attn, v)


def latent_synchronization(tokens, protos, mask, params):
    """Refine tokens with ``x + FFN(masked cross-attention to prototypes)``."""
    x = tokens.features if isinstance(tokens, TokenGrid) else nx.as_tensor(tokens)
    if not isinstance(protos, PrototypeSet):
        protos = PrototypeSet(nx.as_tensor(protos))
    if mask.mask.shape[-2:] != (x.shape[-2], protos.K):
        raise ContractError(f"mask shape {mask.mask.shape} vs T={x.shape[-2]}, K={protos.K}")
    h = params.queries_source(x)
    att = masked_prototype_attention(params.q(h), params.k(protos.P), params.v(protos.P), mask)
    out = x + params.ffn(att)
    if isinstance(tokens, TokenGrid):
        return TokenGrid(out, tokens.height, tokens.width)
    return out
