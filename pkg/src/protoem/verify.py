"""Randomised property suites behind ``protoem verify``.

Each suite returns a list of :class:`Check` results; nothing raises on a
failed property.
"""
import math
import time
from dataclasses import dataclass

import numpy as np

from . import em
from . import numerics as nx
from .encoder import Encoder, EncoderConfig, StageConfig
from .latent_sync import LatentSync, build_assignment_mask, latent_synchronization
from .numerics import FFN, LayerNorm, Linear, Tensor, grad_check, grad_check_module
from .proto_attention import (PrototypeSet, PrototypingLayer, TokenGrid, cross_attention_prototyping,
                              init_prototypes, prototyping_step)

SUITES = ("em", "proto", "sync", "grad")


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _timed(suite, name, fn):
    t0 = time.perf_counter()
    passed, detail = fn()
    return Check(suite, name, bool(passed), detail, time.perf_counter() - t0)


# -- em --------------------------------------------------------------------

def random_mixture(rng, n=None, k=None, d=None, spread=4.0):
    """Sample data from a random isotropic mixture and a perturbed initial state."""
    n = n or int(rng.integers(20, 200))
    k = k or int(rng.integers(1, 6))
    d = d or int(rng.integers(1, 4))
    variance = float(rng.uniform(0.3, 2.0))
    centers = rng.normal(0.0, spread, size=(k, d))
    labels = rng.integers(0, k, size=n)
    x = centers[labels] + rng.normal(0.0, math.sqrt(variance), size=(n, d))
    init = em.MixtureState.uniform(x[rng.choice(n, k, replace=False)] + rng.normal(0, 0.5, (k, d)), variance)
    return x, init


def check_em_monotone(n_cases=100, seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        x, init = random_mixture(rng)
        _, trace = em.run_em(x, init, max_iter=60, tol=0.0)
        worst = max(worst, float(-np.diff(trace).min(initial=0.0)))
    return worst <= tol, f"largest log-likelihood decrease {worst:.3g} over {n_cases} mixtures"


def _linear_contraction(kappa, dim, rng):
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    a = kappa * q  # orthogonal times kappa: every step contracts by exactly kappa
    b = rng.normal(size=dim)
    fixed = np.linalg.solve(np.eye(dim) - a, b)
    return (lambda t: a @ t + b), fixed


def check_contraction_bound(seed=0, n_iters=50):
    rng = np.random.default_rng(seed)
    notes = []
    ok = True
    for kappa in (0.3, 0.7, 0.95):
        op, fixed = _linear_contraction(kappa, 3, rng)
        probe = em.probe_convergence(op, rng.normal(size=3) * 5, fixed_point=fixed, n_iters=n_iters)
        ok &= probe.certified and probe.eps == 0.0
        notes.append(f"linear kappa={kappa}: kappa_hat={probe.kappa:.4g}")
    for _ in range(3):
        centers = np.array([[-6.0, 0.0], [6.0, 0.0], [0.0, 8.0]])
        labels = rng.integers(0, 3, size=300)
        x = centers[labels] + rng.normal(size=(300, 2))
        weights = np.bincount(labels, minlength=3) / 300.0
        op = em.em_operator(x, weights, 1.0)
        init = centers + rng.normal(0, 1.0, size=centers.shape)
        probe = em.probe_convergence(op, init, n_iters=n_iters, fixed_point_iters=200)
        ok &= probe.certified
        notes.append(f"EM: kappa_hat={probe.kappa:.3g}")
    return ok, "; ".join(notes)


# -- proto -----------------------------------------------------------------

def check_assignment_columns(n_cases=100, seed=0, tol=1e-9):
    rng = np.random.default_rng(seed)
    pairs = [(k, t) for k in (1, 4, 20, 100) for t in (16, 256, 1024) if k <= t]
    worst = 0.0
    for _ in range(n_cases):
        k, t = pairs[int(rng.integers(len(pairs)))]
        d = int(rng.integers(2, 9))
        side = int(math.isqrt(t))
        tokens = TokenGrid(rng.normal(0, rng.uniform(0.1, 10.0), size=(t, d)), side, t // side)
        layer = PrototypingLayer(d, rng)
        protos = init_prototypes(tokens, k)
        for _ in range(int(rng.integers(1, 4))):
            step, m = prototyping_step(protos, tokens, layer)
            worst = max(worst, float(np.abs(m.data.sum(axis=0) - 1.0).max()))
            protos = PrototypeSet(protos.P + step.P)
    return worst <= tol, f"max |column sum - 1| = {worst:.3g} over {n_cases} configs"


def matched_mixture(centers, variance):
    """Mixture whose log-weights cancel the centre-norm term of the E-step."""
    a = (centers ** 2).sum(axis=1) / (2.0 * variance)
    w = np.exp(a - a.max())
    return em.MixtureState(centers, w / w.sum(), variance)


def check_em_equivalence(n_cases=50, seed=0, tol=1e-8):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        t = int(rng.integers(2, 65))
        k = int(rng.integers(1, min(8, t) + 1))
        d = int(rng.integers(1, 6))
        variance = float(rng.uniform(0.5, 3.0))
        x = rng.normal(size=(t, d)) * 2.0
        centers = x[rng.choice(t, k, replace=False)] + rng.normal(0, 0.3, (k, d))
        layer = PrototypingLayer(d, init="identity", temperature=variance)
        new, assign = prototyping_step(PrototypeSet(centers), TokenGrid(x, t, 1), layer)
        state = matched_mixture(centers, variance)
        resp = em.e_step(x, state)
        ref = em.m_step(x, resp, state)
        worst = max(worst, float(np.abs(assign.data - resp.r.T).max()),
                    float(np.abs(new.P.data - ref.centers).max()))
    return worst <= tol, f"max elementwise gap {worst:.3g} over {n_cases} instances"


# -- sync ------------------------------------------------------------------

def check_mask_one_hot(n_cases=1000, seed=0):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_cases):
        t, k, d = int(rng.integers(1, 40)), int(rng.integers(1, 12)), int(rng.integers(1, 6))
        sync = LatentSync(d, rng, similarity=("dot", "cosine")[int(rng.integers(2))])
        x = rng.normal(size=(t, d))
        # ties are exercised by duplicated prototypes
        p = rng.normal(size=(k, d))
        if k > 1 and rng.random() < 0.3:
            p[1] = p[0]
        mask = build_assignment_mask(TokenGrid(x, t, 1), PrototypeSet(p), sync).mask
        bad += int(not ((mask.sum(axis=-1) == 1).all() and mask.dtype == bool))
    return bad == 0, f"{bad} of {n_cases} masks not one-hot"


def check_mask_invariance(n_cases=200, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        t, k, d = int(rng.integers(1, 30)), int(rng.integers(2, 10)), int(rng.integers(1, 6))
        sync = LatentSync(d, rng)
        tokens = TokenGrid(rng.normal(size=(t, d)), t, 1)
        p = rng.normal(size=(k, d))
        mask = build_assignment_mask(tokens, PrototypeSet(p), sync)
        used = np.unique(mask.index)
        p2 = p.copy()
        free = np.setdiff1d(np.arange(k), used)
        p2[free] += rng.normal(0, 100.0, size=(len(free), d))
        a = latent_synchronization(tokens, PrototypeSet(p), mask, sync).features.data
        b = latent_synchronization(tokens, PrototypeSet(p2), mask, sync).features.data
        worst = max(worst, float(np.abs(a - b).max()))
    return worst == 0.0, f"max output change {worst!r} when perturbing unassigned prototypes"


# -- grad ------------------------------------------------------------------

def _probe_loss(out, rng):
    r = rng.normal(size=out.shape)
    return lambda y: nx.sum_(y * r)


def gradient_checks(seed=0, step=1e-6):
    """``{layer: max relative error}`` over the layer zoo and a 16x16 encoder."""
    rng = np.random.default_rng(seed)
    errs = {}
    x = rng.normal(size=(5, 7))
    r = rng.normal(size=(5, 7))
    errs["softmax"] = grad_check(lambda t: nx.sum_(nx.softmax_axis(t, -1) * r), x, step)
    errs["softmax_axis0"] = grad_check(lambda t: nx.sum_(nx.softmax_axis(t, 0) * r), x, step)
    g, s = rng.normal(size=7), rng.normal(size=7)
    errs["layer_norm"] = grad_check(lambda t: nx.sum_(nx.layer_norm(t, g, s) * r), x, step)

    def module_err(name, module, fn):
        res = grad_check_module(fn, module, step, rng=rng)
        errs[name] = max(res.values())

    ln = LayerNorm(7)
    ln.load_state({"gain": g, "shift": s})
    module_err("layer_norm.params", ln, lambda: nx.sum_(ln(x) * r))
    f = FFN(7, rng)
    module_err("ffn", f, lambda: nx.sum_(f(x) * r))
    lin = Linear(7, 3, rng)
    r3 = rng.normal(size=(5, 3))
    module_err("linear", lin, lambda: nx.sum_(lin(x) * r3))

    d = 6
    tokens = TokenGrid(rng.normal(size=(2, 12, d)), 3, 4)
    proto = PrototypingLayer(d, rng)
    rp = rng.normal(size=(2, 4, d))
    module_err("prototyping", proto,
               lambda: nx.sum_(cross_attention_prototyping(tokens, 4, 3, proto)[0].P * rp))
    errs["prototyping.tokens"] = grad_check(
        lambda t: nx.sum_(cross_attention_prototyping(TokenGrid(t, 3, 4), 4, 3, proto)[0].P * rp),
        tokens.features.data, step)

    sync = LatentSync(d, rng)
    protos = PrototypeSet(Tensor(rng.normal(size=(2, 4, d))))
    mask = build_assignment_mask(tokens, protos, sync)
    rs = rng.normal(size=(2, 12, d))
    module_err("latent_sync", sync,
               lambda: nx.sum_(latent_synchronization(tokens, protos, mask, sync).features * rs))
    errs["latent_sync.protos"] = grad_check(
        lambda p: nx.sum_(latent_synchronization(tokens, PrototypeSet(p), mask, sync).features * rs),
        protos.P.data, step)

    cfg = EncoderConfig(head="flow", stages=[StageConfig(4, 8, 1, 6, 2), StageConfig(2, 8, 1, 3, 2)])
    enc = Encoder(cfg)
    f1, f2 = rng.random((2, 16, 16, 1)), rng.random((2, 16, 16, 1))
    re = rng.normal(size=(2, 16, 16, 2))
    module_err("encoder", enc, lambda: nx.sum_(enc((f1, f2))[0] * re))
    return errs


def check_gradients(seed=0, tol=1e-4):
    errs = gradient_checks(seed)
    worst = max(errs, key=errs.get)
    return all(e < tol for e in errs.values()), f"{len(errs)} layers, worst {worst} {errs[worst]:.3g}"


REGISTRY = {
    "em": [("monotone log-likelihood", check_em_monotone),
           ("contraction bound", check_contraction_bound)],
    "proto": [("assignment columns sum to 1", check_assignment_columns),
              ("EM equivalence", check_em_equivalence)],
    "sync": [("mask one-hot", check_mask_one_hot),
             ("unassigned prototypes ignored", check_mask_invariance)],
    "grad": [("finite-difference gradients", check_gradients)],
}


def run_suite(name, seed=0):
    if name == "all":
        return [c for s in SUITES for c in run_suite(s, seed)]
    if name not in REGISTRY:
        raise ValueError(f"unknown suite {name!r}")
    return [_timed(name, label, lambda fn=fn: fn(seed=seed)) for label, fn in REGISTRY[name]]


def format_table(checks):
    width = max(len(c.name) for c in checks)
    lines = [f"{'suite':<6} {'check':<{width}} {'result':<6} {'time':>7}  detail"]
    for c in checks:
        lines.append(f"{c.suite:<6} {c.name:<{width}} {'PASS' if c.passed else 'FAIL':<6} "
                     f"{c.seconds:6.2f}s  {c.detail}")
    return "\n".join(lines)
