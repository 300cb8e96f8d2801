"""Two-stage prototype encoder with toy flow and depth heads."""
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .latent_sync import LatentSync, build_assignment_mask, latent_synchronization
from .numerics import FFN, ContractError, LayerNorm, Linear, Module, Tensor
from .proto_attention import PrototypingLayer, TokenGrid, cross_attention_prototyping


class ConfigError(ValueError):
    pass


@dataclass
class StageConfig:
    patch: int = 4
    dim: int = 16
    blocks: int = 2
    K: int = 20
    N: int = 3


@dataclass
class EncoderConfig:
    head: str = "flow"
    in_channels: int = 1
    heads: int = 1
    similarity: str = "dot"
    fusion: str = "concat"
    seed: int = 0
    stages: list = field(default_factory=lambda: [StageConfig(4, 16, 2, 20, 3),
                                                   StageConfig(2, 32, 2, 20, 3)])

    def validate(self, height=None, width=None):
        if self.head not in ("flow", "depth"):
            raise ConfigError(f"head must be flow or depth, got {self.head!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        for s in self.stages:
            if min(s.patch, s.dim, s.blocks, s.K, s.N) < 1:
                raise ConfigError(f"stage values must be positive: {s}")
            if s.dim % self.heads:
                raise ConfigError(f"dim {s.dim} not divisible by {self.heads} heads")
        if height is not None:
            f = self.downsample
            if height % f or width % f:
                raise ConfigError(f"image {height}x{width} not divisible by {f}")

    @property
    def downsample(self):
        f = 1
        for s in self.stages:
            f *= s.patch
        return f

    @property
    def out_channels(self):
        return 2 if self.head == "flow" else 1


FUSIONS = ("concat", "bilinear")


def patch_tokens(image, patch):
    """(..., H, W, C) -> (..., H/p * W/p, p*p*C), patches row-major, pixels row-major."""
    *lead, h, w, c = image.shape
    if h % patch or w % patch:
        raise ConfigError(f"image {h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    r = len(lead)
    x = nx.reshape(image, tuple(lead) + (gh, patch, gw, patch, c))
    x = nx.transpose(x, tuple(range(r)) + (r, r + 2, r + 1, r + 3, r + 4))
    return nx.reshape(x, tuple(lead) + (gh * gw, patch * patch * c)), (gh, gw)


def patch_embed(image, patch, linear):
    """Non-overlapping patches flattened and mapped by ``linear``."""
    tokens, (gh, gw) = patch_tokens(nx.as_tensor(image), patch)
    return TokenGrid(linear(tokens), gh, gw)


def upsample_matrix(n_out, n_in):
    """Bilinear interpolation weights (n_out, n_in), half-pixel centres, edge clamped."""
    u = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        t = src - lo
        u[i, lo] += 1.0 - t
        u[i, hi] += t
    return u


def upsample(grid, height, width):
    """Bilinear resize of (B, h, w, C) to (B, height, width, C)."""
    _, h, w, _ = grid.shape
    uh = upsample_matrix(height, h)
    uw = upsample_matrix(width, w)
    x = nx.transpose(grid, (0, 3, 1, 2))          # B C h w
    x = nx.matmul(x, uw.T)                         # B C h W
    x = nx.matmul(nx.transpose(x), uh.T)           # B C W H
    return nx.transpose(x, (0, 3, 2, 1))           # B H W C


class Block(Module):
    """Pre-norm block: prototyping, latent synchronization, then an FFN."""

    def __init__(self, d, rng, heads=1, similarity="dot"):
        super().__init__()
        self.norm1 = self.child("norm1", LayerNorm(d))
        self.proto = self.child("proto", PrototypingLayer(d, rng, heads=heads))
        self.sync = self.child("sync", LatentSync(d, rng, similarity=similarity))
        self.norm2 = self.child("norm2", LayerNorm(d))
        self.ffn = self.child("ffn", FFN(d, rng))

    def __call__(self, grid, k, n_iters):
        k = min(k, grid.T)
        h = TokenGrid(self.norm1(grid.features), grid.height, grid.width)
        protos, assign = cross_attention_prototyping(h, k, n_iters, self.proto)
        mask = build_assignment_mask(grid, protos, self.sync)
        x = latent_synchronization(grid.features, protos, mask, self.sync)
        x = x + self.ffn(self.norm2(x))
        return TokenGrid(x, grid.height, grid.width), {"assignment": assign.M.data,
                                                       "mask": mask.mask, "grid": (grid.height, grid.width)}


class Stage(Module):
    def __init__(self, cfg, c_in, rng, heads, similarity):
        super().__init__()
        self.cfg = cfg
        self.embed = self.child("embed", Linear(cfg.patch * cfg.patch * c_in, cfg.dim, rng))
        self.blocks = [self.child(f"block{i}", Block(cfg.dim, rng, heads, similarity))
                       for i in range(cfg.blocks)]

    def __call__(self, image):
        grid = patch_embed(image, self.cfg.patch, self.embed)
        diags = []
        for blk in self.blocks:
            grid, d = blk(grid, self.cfg.K, self.cfg.N)
            diags.append(d)
        return grid, diags


class Encoder(Module):
    """Feature pyramid of :class:`Stage` objects plus a per-token regression head.

    Flow mode encodes both frames with shared weights, joins the final token
    features along the channel axis and regresses (u, v) per token. The
    ``bilinear`` fusion also appends the elementwise product of two linear
    maps of the frame features. Depth mode
    regresses log depth. Predictions are bilinearly resized to the input size.
    """

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        c_in = cfg.in_channels
        self.stages = []
        for i, s in enumerate(cfg.stages):
            self.stages.append(self.child(f"stage{i + 1}", Stage(s, c_in, rng, cfg.heads, cfg.similarity)))
            c_in = s.dim
        d = cfg.stages[-1].dim
        d_head = 2 * d if cfg.head == "flow" else d
        if cfg.head == "flow" and cfg.fusion == "bilinear":
            self.fa = self.child("fa", Linear(d, d, rng))
            self.fb = self.child("fb", Linear(d, d, rng))
            d_head = 3 * d
        self.head_norm = self.child("head_norm", LayerNorm(d_head))
        self.head = self.child("head", Linear(d_head, cfg.out_channels, rng))

    def encode(self, images):
        """Token features of the last stage for (B, H, W, C) images."""
        x = images
        diags = []
        grid = None
        for i, stage in enumerate(self.stages):
            grid, d = stage(x)
            for j, dj in enumerate(d):
                dj.update(stage=i + 1, block=j)
            diags.extend(d)
            x = nx.reshape(grid.features, (grid.features.shape[0], grid.height, grid.width, grid.D))
        return grid, diags

    def __call__(self, inputs):
        """Predict from ``(frame1, frame2)`` (flow) or an image (depth).

        Frames are (H, W, C) or (B, H, W, C). Returns the prediction with the
        same leading shape and the per-block diagnostics.
        """
        cfg = self.cfg
        if cfg.head == "flow":
            f1, f2 = (nx.as_tensor(f) for f in inputs)
            if f1.shape != f2.shape:
                raise ContractError(f"frame shapes differ: {f1.shape} vs {f2.shape}")
            single = f1.ndim == 3
            if single:
                f1 = nx.reshape(f1, (1,) + f1.shape)
                f2 = nx.reshape(f2, (1,) + f2.shape)
            b = f1.shape[0]
            images = nx.concat([f1, f2], axis=0)
        else:
            images = nx.as_tensor(inputs)
            single = images.ndim == 3
            if single:
                images = nx.reshape(images, (1,) + images.shape)
            b = images.shape[0]
        _, hh, ww, c = images.shape
        if c != cfg.in_channels:
            raise ContractError(f"expected {cfg.in_channels} channels, got {c}")
        cfg.validate(hh, ww)
        grid, diags = self.encode(images)
        feats = grid.features
        if cfg.head == "flow":
            f1 = nx.slice_axis(feats, 0, b, axis=0)
            f2 = nx.slice_axis(feats, b, 2 * b, axis=0)
            parts = [f1, f2]
            if cfg.fusion == "bilinear":
                parts.append(self.fa(f1) * self.fb(f2))
            feats = nx.concat(parts, axis=-1)
        feats = self.head_norm(feats)
        out = self.head(feats)
        out = nx.reshape(out, (b, grid.height, grid.width, cfg.out_channels))
        out = upsample(out, hh, ww)
        if single:
            out = nx.reshape(out, out.shape[1:])
        return out, diags


def parameter_count(cfg):
    """Closed-form number of trainable scalars for ``cfg``.

    Prototype count K and iteration count N do not enter: prototypes are
    pooled from the data and the projections are shared across iterations.
    """
    def lin(i, o):
        return i * o + o

    def ffn(d):
        return lin(d, 4 * d) + lin(4 * d, d)

    total = 0
    c_in = cfg.in_channels
    for s in cfg.stages:
        d = s.dim
        block = 2 * d + 3 * lin(d, d) + (2 * d + 3 * lin(d, d) + ffn(d)) + 2 * d + ffn(d)
        total += lin(s.patch * s.patch * c_in, d) + s.blocks * block
        c_in = d
    d = cfg.stages[-1].dim
    d_head = 2 * d if cfg.head == "flow" else d
    if cfg.head == "flow" and cfg.fusion == "bilinear":
        d_head = 3 * d
        total += 2 * lin(d, d)
    total += 2 * d_head + lin(d_head, cfg.out_channels)
    return total
