"""Training losses (differentiable) and evaluation metrics (plain numpy)."""
import math

import numpy as np

from .. import numerics as nx

SILOG_LAMBDA = 0.85


def epe_loss(pred_flow, gt_flow, eps=1e-8):
    """Mean end-point error ``mean sqrt(du^2 + dv^2 + eps) - sqrt(eps)``.

    The offset keeps the loss exactly 0 at the ground truth while ``eps``
    keeps the gradient finite there.
    """
    d = nx.sub(pred_flow, gt_flow)
    sq = nx.sum_(nx.square(d), axis=-1)
    return nx.mean(nx.sqrt(sq + eps)) - math.sqrt(eps)


def silog_loss(pred_log_depth, gt_depth, lam=SILOG_LAMBDA, eps=1e-8):
    """Root scale-invariant log error ``sqrt(mean d^2 - lam (mean d)^2)``.

    ``d = pred_log_depth - log(gt_depth)``. Written as variance plus
    ``(1 - lam)`` times the squared mean so the radicand is never negative.
    """
    gt = np.asarray(gt_depth.data if isinstance(gt_depth, nx.Tensor) else gt_depth, dtype=np.float64)
    if (gt <= 0).any():
        raise ValueError("ground-truth depth must be positive")
    d = nx.sub(pred_log_depth, np.log(gt))
    m = nx.mean(d)
    var = nx.mean(nx.square(d - m))
    radicand = var + nx.square(m) * (1.0 - lam)
    return nx.sqrt(radicand + eps) - math.sqrt(eps)


def epe(pred_flow, gt_flow):
    d = np.asarray(pred_flow, dtype=np.float64) - np.asarray(gt_flow, dtype=np.float64)
    return float(np.sqrt((d ** 2).sum(axis=-1)).mean())


def abs_rel(pred_depth, gt_depth):
    gt = np.asarray(gt_depth, dtype=np.float64)
    return float((np.abs(np.asarray(pred_depth) - gt) / gt).mean())


def rmse(pred_depth, gt_depth):
    d = np.asarray(pred_depth, dtype=np.float64) - np.asarray(gt_depth, dtype=np.float64)
    return float(np.sqrt((d ** 2).mean()))
