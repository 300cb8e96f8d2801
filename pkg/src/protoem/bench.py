"""Cost of prototype attention against full self-attention.

MACs are tallied by the instrumented matmul kernel and compared with a
closed-form model; wall time is a secondary, advisory signal.

Closed form for T tokens of width D, K prototypes and N iterations::

    prototyping  iter = 2 N K T D      (Q K^T and M V per iteration)
                 proj = 2 T D^2 + N K D^2
                 pool = K T D          (adaptive pooling of the initial P)
    self-attn    iter = 2 T^2 D
                 proj = 3 T D^2
"""
import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import numerics as nx
from .numerics import fixed_matmul, mac_tag
from .proto_attention import PrototypingLayer, TokenGrid, cross_attention_prototyping

log = logging.getLogger(__name__)

CSV_COLUMNS = ("T", "K", "N", "D", "proto_macs", "self_macs", "proto_ns", "self_ns")
DEFAULT_GRID = (256, 1024, 4096, 16384)
# 960 x 432 input at patch 4
ANCHOR = dict(height=240, width=108)


@dataclass(frozen=True)
class BenchConfig:
    height: int
    width: int
    K: int = 20
    N: int = 3
    D: int = 32

    @property
    def T(self):
        return self.height * self.width

    @classmethod
    def square(cls, T, **kw):
        side = math.isqrt(T)
        if side * side != T:
            raise ValueError(f"T={T} is not a perfect square")
        return cls(side, side, **kw)


@dataclass
class MacCost:
    iter: int
    proj: int
    pool: int = 0

    @property
    def total(self):
        return self.iter + self.proj + self.pool


@dataclass
class BenchPoint:
    H: int
    W: int
    K: int
    N: int
    D: int
    proto: MacCost
    self_attn: MacCost
    proto_ns: float = float("nan")
    self_ns: float = float("nan")
    counted: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.H * self.W

    def row(self):
        return {"T": self.T, "K": self.K, "N": self.N, "D": self.D,
                "proto_macs": self.proto.total, "self_macs": self.self_attn.total,
                "proto_ns": _fmt_ns(self.proto_ns), "self_ns": _fmt_ns(self.self_ns)}


def _fmt_ns(x):
    return "" if x is None or math.isnan(x) else str(int(round(x)))


def count_macs(cfg):
    """Closed-form ``(prototyping, self-attention)`` MAC costs for ``cfg``."""
    T, K, N, D = cfg.T, cfg.K, cfg.N, cfg.D
    proto = MacCost(iter=2 * N * K * T * D, proj=2 * T * D * D + N * K * D * D, pool=K * T * D)
    self_attn = MacCost(iter=2 * T * T * D, proj=3 * T * D * D)
    return proto, self_attn


def iteration_ratio(cfg):
    """Prototyping over self-attention iterative cost, exactly ``N K / T``."""
    proto, self_attn = count_macs(cfg)
    return Fraction(proto.iter, self_attn.iter)


def _inputs(cfg, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((cfg.T, cfg.D))
    layer = PrototypingLayer(cfg.D, rng)
    return x, layer


def prototype_path(x, layer, cfg):
    tokens = TokenGrid(x, cfg.height, cfg.width)
    protos, _ = cross_attention_prototyping(tokens, cfg.K, cfg.N, layer)
    return protos.P.data


def self_attention_path(x, layer, chunk=1024):
    """Single-head softmax self-attention, row-chunked to bound memory."""
    with mac_tag("proj"):
        q = layer.q(x).data
        k = layer.k(x).data
        v = layer.v(x).data
    kt = np.ascontiguousarray(k.T)
    scale = 1.0 / math.sqrt(x.shape[-1])
    out = np.empty_like(v)
    for s in range(0, x.shape[0], chunk):
        with mac_tag("iter"):
            logits = fixed_matmul(q[s:s + chunk], kt) * scale
        logits -= logits.max(axis=-1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=-1, keepdims=True)
        with mac_tag("iter"):
            out[s:s + chunk] = fixed_matmul(p, v)
    return out


def measure_macs(cfg, seed=0, self_attention=True):
    """Instrumented ``{path: {tag: macs}}`` from one run of each path."""
    x, layer = _inputs(cfg, seed)
    with nx.count_macs() as c:
        prototype_path(x, layer, cfg)
    out = {"proto": dict(c.by_tag)}
    if self_attention:
        with nx.count_macs() as c:
            self_attention_path(x, layer)
        out["self"] = dict(c.by_tag)
    return out


def _median_ns(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    med = float(np.median(times))
    if med < 1000:
        warnings.warn(f"median {med:.0f} ns is below timer resolution", RuntimeWarning)
    return med


def bench_point(cfg, reps=5, seed=0, time_self=True):
    """Time both paths on identical inputs and weights."""
    if reps < 5:
        raise ValueError("need at least 5 repetitions")
    proto, self_attn = count_macs(cfg)
    x, layer = _inputs(cfg, seed)
    point = BenchPoint(cfg.height, cfg.width, cfg.K, cfg.N, cfg.D, proto, self_attn)
    with threadpool_single():
        point.proto_ns = _median_ns(lambda: prototype_path(x, layer, cfg), reps)
        if time_self:
            point.self_ns = _median_ns(lambda: self_attention_path(x, layer), reps)
    return point


def threadpool_single():
    """Pin BLAS pools to one thread for timing."""
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def run_sweep(grid=DEFAULT_GRID, K=20, N=3, D=32, reps=5, seed=0, anchor=True):
    """Bench points over square token grids, plus the untimed-baseline anchor row.

    The anchor (T = 25920) times only the prototyping path: a full
    self-attention pass at that size is reported by its closed-form MACs.
    """
    if not grid:
        raise ValueError("empty sweep grid")
    points = []
    for T in grid:
        cfg = BenchConfig.square(T, K=K, N=N, D=D)
        p = bench_point(cfg, reps, seed)
        log.info("T=%d proto %.3g ns self %.3g ns", T, p.proto_ns, p.self_ns)
        points.append(p)
    if anchor:
        cfg = BenchConfig(ANCHOR["height"], ANCHOR["width"], K=K, N=N, D=D)
        points.append(bench_point(cfg, reps, seed, time_self=False))
    return points


def loglog_slope(ts, ns):
    """Least-squares slope of log(time) against log(T)."""
    lx, ly = np.log(np.asarray(ts, float)), np.log(np.asarray(ns, float))
    return float(np.polyfit(lx, ly, 1)[0])


def sweep_slopes(points):
    timed = [p for p in points if not math.isnan(p.self_ns)]
    ts = [p.T for p in timed]
    return (loglog_slope(ts, [p.proto_ns for p in timed]),
            loglog_slope(ts, [p.self_ns for p in timed]))


def write_csv(points, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for p in points:
            w.writerow(p.row())


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
