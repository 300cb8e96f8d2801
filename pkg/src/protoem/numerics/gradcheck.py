"""Central finite-difference checks for tape gradients."""
import logging

import numpy as np

from .tensor import NonFiniteError, Tape, Tensor

log = logging.getLogger(__name__)


def _rel_err(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def grad_check(f, point, step=1e-6, coords=None):
    """Max relative error between tape and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``. A non-finite value at any
    probe point is a failed check and returns ``inf``.

    :param coords: optional flat indices to probe; all coordinates by default.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    x0 = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    try:
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            y = f(x)
        (analytic,) = tape.gradient(y, [x])
        flat = x0.reshape(-1)
        idx = range(flat.size) if coords is None else coords
        worst = 0.0
        for i in idx:
            xp = flat.copy()
            xm = flat.copy()
            xp[i] += step
            xm[i] -= step
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            numeric = (fp - fm) / (2 * step)
            if not np.isfinite(numeric):
                raise NonFiniteError("non-finite finite difference")
            worst = max(worst, float(_rel_err(analytic.reshape(-1)[i], numeric)))
        return worst
    except (NonFiniteError, FloatingPointError) as exc:
        log.warning("gradient check failed on non-finite value: %s", exc)
        return float("inf")


def grad_check_module(loss_fn, module, step=1e-6, max_coords=12, rng=None):
    """Check every parameter of ``module`` on a sample of coordinates.

    ``loss_fn()`` builds the scalar loss from the module's current parameters.
    Returns ``{name: max relative error}``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    named = module.named_parameters()
    base = {k: v.data.copy() for k, v in named.items()}
    try:
        with Tape() as tape:
            loss = loss_fn()
        params = list(named.values())
        grads = dict(zip(named, tape.gradient(loss, params)))
    except (NonFiniteError, FloatingPointError) as exc:
        log.warning("gradient check failed on non-finite value: %s", exc)
        return {k: float("inf") for k in named}
    report = {}
    for name, value in base.items():
        n = value.size
        picks = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        worst = 0.0
        for i in picks:
            vals = []
            for sgn in (1.0, -1.0):
                v = value.copy().reshape(-1)
                v[i] += sgn * step
                module.load_state({name: v.reshape(value.shape)}, strict=False)
                try:
                    vals.append(loss_fn().item())
                except (NonFiniteError, FloatingPointError):
                    vals.append(float("nan"))
            module.load_state({name: value}, strict=False)
            numeric = (vals[0] - vals[1]) / (2 * step)
            if not np.isfinite(numeric):
                worst = float("inf")
                break
            worst = max(worst, float(_rel_err(grads[name].reshape(-1)[i], numeric)))
        report[name] = worst
    return report
