"""Isotropic Gaussian-mixture EM with a fixed shared variance.

This is the plain-numpy reference for the attention-based prototyping layer:
the E-step is a softmax over components of unnormalised log-densities and the
M-step is a responsibility-weighted mean. It also hosts the convergence probe
that checks the geometric contraction bound on an iterate trajectory.
"""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_MASS = 1e-12


class EMDivergence(FloatingPointError):
    pass


@dataclass
class MixtureState:
    centers: np.ndarray  # (K, D)
    weights: np.ndarray  # (K,)
    variance: float = 1.0
    degenerate: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.weights.shape[0] != self.centers.shape[0]:
            raise ValueError("weights and centers disagree on K")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixing weights sum to {self.weights.sum()!r}")
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.weights), dtype=bool)

    @property
    def K(self):
        return self.centers.shape[0]

    @classmethod
    def uniform(cls, centers, variance=1.0):
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        k = centers.shape[0]
        return cls(centers, np.full(k, 1.0 / k), variance)


@dataclass
class Responsibilities:
    r: np.ndarray  # (N, K) posterior membership
    logits: np.ndarray  # (N, K) unnormalised log posterior
    log_norm: np.ndarray  # (N,) per-row log-sum-exp of logits
    underflow: np.ndarray  # (N,) rows that fell back to uniform


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.log(weights)


def e_step(data, state):
    """Posterior responsibilities ``r[i,k] ~ w_k exp(-|x_i - c_k|^2 / 2 var)``.

    Normalised per row in log space. A row whose logits are all ``-inf``
    falls back to ``1/K`` and is flagged in ``underflow``.
    """
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    c = state.centers
    if x.shape[1] != c.shape[1]:
        raise ValueError(f"data dimension {x.shape[1]} vs centers {c.shape[1]}")
    sq = ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=-1)
    logits = _log_weights(state.weights)[None, :] - sq / (2.0 * state.variance)
    mx = logits.max(axis=1, keepdims=True)
    underflow = ~np.isfinite(mx[:, 0])
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(logits - mx)
    s = e.sum(axis=1, keepdims=True)
    r = e / np.where(s > 0, s, 1.0)
    k = c.shape[0]
    if underflow.any():
        r[underflow] = 1.0 / k
    with np.errstate(divide="ignore"):
        log_norm = (mx + np.log(s))[:, 0]
    return Responsibilities(r=r, logits=logits, log_norm=log_norm, underflow=underflow)


def m_step(data, resp, prev):
    """Weighted-mean centers and column-mean weights; variance is carried over.

    A component whose total responsibility is below ``1e-12`` keeps its
    previous center and is flagged in ``degenerate``.
    """
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    r = resp.r if isinstance(resp, Responsibilities) else np.asarray(resp, dtype=np.float64)
    if np.abs(r.sum(axis=1) - 1.0).max() > 1e-9:
        raise ValueError("responsibility rows must sum to 1")
    mass = r.sum(axis=0)
    degenerate = mass < DEGENERATE_MASS
    safe = np.where(degenerate, 1.0, mass)
    centers = (r.T @ x) / safe[:, None]
    centers[degenerate] = prev.centers[degenerate]
    weights = mass / x.shape[0]
    weights = weights / weights.sum()
    return MixtureState(centers, weights, prev.variance, degenerate)


def log_likelihood(data, state):
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    d = x.shape[1]
    resp = e_step(x, state)
    const = -0.5 * d * math.log(2.0 * math.pi * state.variance)
    return float(resp.log_norm.sum() + x.shape[0] * const)


def run_em(data, init, max_iter=100, tol=1e-10):
    """Alternate E and M steps until the log-likelihood gain drops below ``tol``.

    Returns ``(state, trace)`` where ``trace[0]`` is the initial
    log-likelihood and ``trace[n]`` the value after ``n`` iterations.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    state = init
    trace = [log_likelihood(x, state)]
    if not np.isfinite(trace[0]):
        raise EMDivergence("non-finite log-likelihood at iteration 0")
    for it in range(1, max_iter + 1):
        state = m_step(x, e_step(x, state), state)
        ll = log_likelihood(x, state)
        if not np.isfinite(ll):
            raise EMDivergence(f"non-finite log-likelihood at iteration {it}")
        trace.append(ll)
        if ll - trace[-2] < tol:
            break
    return state, np.array(trace)


def em_operator(data, weights, variance=1.0):
    """The map ``centers -> centers`` of one EM iteration with fixed weights."""
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    w = np.asarray(weights, dtype=np.float64)

    def op(theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(len(w), -1)
        state = MixtureState(theta, w, variance)
        return m_step(x, e_step(x, state), state).centers

    return op


def population_em_operator(truth, weights=None, variance=None, n_nodes=60):
    """EM map under the true mixture density, integrated by Gauss-Hermite.

    ``truth`` is the generating :class:`MixtureState`. Uses a tensor-product
    rule, so it is meant for D <= 2.
    """
    nodes, qw = np.polynomial.hermite_e.hermegauss(n_nodes)
    qw = qw / qw.sum()
    d = truth.centers.shape[1]
    grid = np.stack(np.meshgrid(*([nodes] * d), indexing="ij"), -1).reshape(-1, d)
    gw = np.prod(np.stack(np.meshgrid(*([qw] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
    sd = math.sqrt(truth.variance)
    pts = np.concatenate([c + sd * grid for c in truth.centers])
    pw = np.concatenate([wk * gw for wk in truth.weights])
    w = truth.weights if weights is None else np.asarray(weights, dtype=np.float64)
    var = truth.variance if variance is None else variance

    def op(theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(len(w), -1)
        r = e_step(pts, MixtureState(theta, w, var)).r * pw[:, None]
        return (r.T @ pts) / r.sum(axis=0)[:, None]

    return op


@dataclass
class ConvergenceProbe:
    """Trajectory record and verdict for the geometric contraction bound.

    The bound checked at every ``n`` is
    ``|theta_n - fixed| <= kappa**n |theta_0 - fixed| + eps / (1 - kappa)``.
    """

    iterates: np.ndarray
    fixed_point: np.ndarray
    distances: np.ndarray
    contracting: bool
    kappa: float | None
    eps: float
    radius: float
    delta: float
    bound: np.ndarray
    satisfied: np.ndarray
    atol: float
    premises: str = "FOS(gamma) and lambda-strong concavity: assumed, not verified"

    @property
    def certified(self):
        return bool(self.contracting and self.satisfied.all())

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "dist_to_fixed_point", "bound_value", "satisfied"])
        for n, (dist, b, ok) in enumerate(zip(self.distances, self.bound, self.satisfied)):
            w.writerow([n, repr(float(dist)), repr(float(b)), int(bool(ok))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def probe_convergence(operator, init, fixed_point=None, n_iters=50, population_operator=None,
                      fixed_point_iters=200, delta=0.05, rtol=1e-12):
    """Iterate ``operator`` from ``init`` and test the contraction bound.

    :param fixed_point: the limit point; if omitted it is taken as the iterate
        reached after ``fixed_point_iters`` applications of ``operator``.
    :param population_operator: when given, ``eps`` is the largest observed
        gap between ``operator`` and it along the trajectory; otherwise 0.
    :param rtol: distances below ``rtol * max(1, |fixed_point|)`` are treated
        as converged to machine precision; they are excluded from the rate
        estimate and the same amount is allowed as slack in the bound.
    :param delta: failure-probability budget, recorded only.
    """
    theta0 = np.asarray(init, dtype=np.float64)
    iterates = [theta0]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(n_iters):
            nxt = np.asarray(operator(iterates[-1]), dtype=np.float64).reshape(theta0.shape)
            if not np.isfinite(nxt).all():
                diverged = True
                break
            iterates.append(nxt)
    if fixed_point is None:
        fp = iterates[-1]
        for _ in range(fixed_point_iters):
            fp = np.asarray(operator(fp), dtype=np.float64).reshape(theta0.shape)
    else:
        fp = np.asarray(fixed_point, dtype=np.float64).reshape(theta0.shape)
    iterates = np.stack(iterates)
    dist = np.sqrt(((iterates - fp) ** 2).reshape(len(iterates), -1).sum(axis=1))
    atol = rtol * max(1.0, float(np.sqrt((fp ** 2).sum())))
    eps = 0.0
    if population_operator is not None:
        gaps = [np.sqrt(((np.asarray(operator(t)) - np.asarray(population_operator(t))) ** 2).sum())
                for t in iterates[:-1]]
        eps = float(max(gaps)) if gaps else 0.0

    kappa = None
    contracting = False
    if not diverged and np.isfinite(dist).all():
        live = dist[:-1] > atol
        if live.any():
            ratio = float((dist[1:][live] / dist[:-1][live]).max())
        else:
            ratio = 0.0
        if ratio < 1.0:
            contracting = True
            kappa = min(max(ratio, np.finfo(float).tiny), 1.0 - np.finfo(float).eps)

    n = np.arange(len(dist))
    if contracting:
        bound = kappa ** n * dist[0] + eps / (1.0 - kappa)
        satisfied = dist <= bound + atol
    else:
        bound = np.full(len(dist), np.inf)
        satisfied = np.zeros(len(dist), dtype=bool)
    radius = float(dist.max()) if np.isfinite(dist).all() else float("inf")
    return ConvergenceProbe(iterates=iterates, fixed_point=fp, distances=dist,
                            contracting=contracting, kappa=kappa, eps=eps, radius=radius,
                            delta=delta, bound=bound, satisfied=satisfied, atol=atol)
