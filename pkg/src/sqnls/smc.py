"""Bootstrap particle filter with Fisher-identity score estimates.

The default model is the scalar nonlinear, time-varying benchmark

    x_{t+1} = 0.5 x_t + b x_t / (1 + x_t^2) + 8 cos(1.2 t) + w_t / q
    y_t     = 0.05 x_t^2 + e_t,     w_t ~ N(0, 1),  e_t ~ N(0, 0.1),

with ``x_0 ~ N(0, 1)``. A linear-Gaussian model with the same interface is
provided so that the filter can be checked against a Kalman filter.

The score is estimated with Fisher's identity: the gradient of the
log-likelihood equals the posterior expectation of the complete-data score.
Each particle carries the accumulated transition score along its ancestral
path, so the estimate is ``sum_i w_n^i S_n^i``. The observation density does
not depend on (b, q) and contributes nothing.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateWeights, OracleFailure, ParseError
from .problems import NoisyEval, StochasticOracle

__all__ = [
    "NonlinearSSM",
    "LinearGaussianSSM",
    "ParticleSystem",
    "simulate_data",
    "write_observations",
    "read_observations",
    "bootstrap_pf",
    "fisher_gradient",
    "SSMOracle",
    "ssm_oracle",
    "B_TRUE",
    "Q_TRUE",
]

B_TRUE = 25.0
Q_TRUE = 1.0 / math.sqrt(0.5)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NonlinearSSM:
    b: float = B_TRUE
    q: float = Q_TRUE
    obs_var: float = 0.1

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("q must be positive")

    @property
    def theta(self):
        return np.array([self.b, self.q])

    def with_theta(self, theta):
        return NonlinearSSM(float(theta[0]), float(theta[1]), self.obs_var)

    def transition_mean(self, x, t):
        """Mean of x_{t+1} given x_t."""
        return 0.5 * x + self.b * x / (1.0 + x * x) + 8.0 * math.cos(1.2 * t)

    def obs_mean(self, x):
        return 0.05 * x * x

    def transition_score(self, x_new, x_prev, t):
        r = x_new - self.transition_mean(x_prev, t)
        q2 = self.q * self.q
        d_b = q2 * r * x_prev / (1.0 + x_prev * x_prev)
        d_q = 1.0 / self.q - self.q * r * r
        return np.stack([d_b, d_q], axis=-1)


@dataclass(frozen=True)
class LinearGaussianSSM:
    """``x_{t+1} = a x_t + w_t / q``, ``y_t = x_t + e_t``; parameters (a, q)."""

    a: float = 0.9
    q: float = 1.0
    obs_var: float = 1.0

    @property
    def theta(self):
        return np.array([self.a, self.q])

    def with_theta(self, theta):
        return LinearGaussianSSM(float(theta[0]), float(theta[1]), self.obs_var)

    def transition_mean(self, x, t):
        return self.a * x

    def obs_mean(self, x):
        return x

    def transition_score(self, x_new, x_prev, t):
        r = x_new - self.a * x_prev
        q2 = self.q * self.q
        return np.stack([q2 * r * x_prev, 1.0 / self.q - self.q * r * r], axis=-1)


def _obs_loglik(model, y, x):
    r = y - model.obs_mean(x)
    # overflow to -inf is the degenerate-weight signal handled by the caller
    with np.errstate(over="ignore"):
        return -0.5 * (_LOG_2PI + math.log(model.obs_var) + r * r / model.obs_var)


def simulate_data(model, n, seed, return_states=False):
    """Draw ``y_1..y_n`` (and optionally ``x_0..x_n``) from ``model``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x = np.empty(n + 1)
    y = np.empty(n)
    x[0] = rng.standard_normal()
    std = 1.0 / model.q
    obs_std = math.sqrt(model.obs_var)
    for t in range(1, n + 1):
        x[t] = model.transition_mean(x[t - 1], t - 1) + std * rng.standard_normal()
        y[t - 1] = model.obs_mean(x[t]) + obs_std * rng.standard_normal()
    return (y, x) if return_states else y


def write_observations(y, path):
    """Store observations as CSV with columns ``t,y`` (t starts at 1)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, v in enumerate(np.asarray(y, dtype=float), start=1):
            w.writerow([t, format(float(v), ".17g")])


def read_observations(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        t = [int(r["t"]) for r in rows]
        y = np.array([float(r["y"]) for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: expected columns t,y ({exc})") from None
    if t != list(range(1, len(t) + 1)):
        raise ParseError(f"{path}: t must run 1, 2, ..., n")
    return y


@dataclass
class ParticleSystem:
    """Final state of a filter run."""

    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray  # (n, N): index of each particle's parent at step t
    loglik: float
    score: Optional[np.ndarray] = None
    degenerate: bool = False
    states: Optional[np.ndarray] = None  # (n + 1, N) when the history is kept

    def lineages(self):
        """States along each final particle's ancestral path, shape (N, n + 1)."""
        if self.states is None:
            raise ValueError("filter was run without keep_history=True")
        n, N = self.ancestors.shape
        idx = np.arange(N)
        paths = np.empty((N, n + 1))
        for t in range(n, 0, -1):
            paths[:, t] = self.states[t, idx]
            idx = self.ancestors[t - 1, idx]
        paths[:, 0] = self.states[0, idx]
        return paths


RESAMPLERS = ("multinomial", "systematic", "sorted")


def _resample(rng, w, x, scheme):
    N = len(w)
    if scheme == "multinomial":
        u = rng.random(N)
    else:
        u = (rng.random() + np.arange(N)) / N
    order = np.argsort(x, kind="stable") if scheme == "sorted" else None
    cdf = np.cumsum(w if order is None else w[order])
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), N - 1)
    return idx if order is None else order[idx]


def bootstrap_pf(model, y, N, seed, score=False, resampling="multinomial", keep_history=False):
    """Run a bootstrap filter; returns ``(loglik, ParticleSystem)``.

    Resampling happens before every propagation except the first (the prior
    particles are equally weighted). All random numbers come from one
    generator seeded with ``seed`` and are drawn in a fixed order, so runs at
    nearby parameters with the same seed share their randomness.
    """
    if N < 2:
        raise ValueError("need at least two particles")
    y = np.asarray(y, dtype=float)
    n = len(y)
    rng = np.random.default_rng(seed)
    std = 1.0 / model.q

    x = rng.standard_normal(N)
    w = np.full(N, 1.0 / N)
    S = np.zeros((N, 2)) if score else None
    ancestors = np.empty((n, N), dtype=np.int64)
    states = np.empty((n + 1, N)) if keep_history else None
    if keep_history:
        states[0] = x
    loglik = 0.0
    for t in range(1, n + 1):
        a = np.arange(N) if t == 1 else _resample(rng, w, x, resampling)
        ancestors[t - 1] = a
        x_prev = x[a]
        x = model.transition_mean(x_prev, t - 1) + std * rng.standard_normal(N)
        if score:
            S = S[a] + model.transition_score(x, x_prev, t - 1)
        if keep_history:
            states[t] = x
        logw = _obs_loglik(model, y[t - 1], x)
        m = logw.max()
        if not np.isfinite(m):
            system = ParticleSystem(x, np.full(N, np.nan), ancestors, -math.inf, None, True, states)
            return -math.inf, system
        v = np.exp(logw - m)
        total = v.sum()
        loglik += m + math.log(total / N)
        w = v / total

    grad = None
    if score:
        grad = w @ S
    return loglik, ParticleSystem(x, w, ancestors, loglik, grad, states=states)


def fisher_gradient(model, y, N, seed, resampling="multinomial"):
    """Score estimate ``(dl/d theta_1, dl/d q)`` from one filter run."""
    if len(y) == 0:
        return np.zeros(2)
    loglik, system = bootstrap_pf(model, y, N, seed, score=True, resampling=resampling)
    if system.degenerate:
        raise DegenerateWeights("all particle weights vanished")
    return system.score


class SSMOracle(StochasticOracle):
    """Negative scaled log-likelihood of (b, log q) estimated by particle filtering.

    The auxiliary variable is the filter seed. With ``replicas > 1`` each
    evaluation averages independent filters seeded from ``u``, and the
    per-replica costs feed the variance estimate of the line search.
    """

    name = "ssm"
    dim = 2

    def __init__(self, y, N=200, scale=None, replicas=1, model=None, resampling="multinomial"):
        self.y = np.asarray(y, dtype=float)
        self.N = int(N)
        self.scale = 1.0 / len(self.y) if scale is None else float(scale)
        self.replicas = int(replicas)
        self.model = NonlinearSSM() if model is None else model
        self.resampling = resampling

    @staticmethod
    def to_theta(x):
        return np.array([x[0], math.exp(x[1])])

    @staticmethod
    def from_theta(theta):
        return np.array([theta[0], math.log(theta[1])])

    def sample_u(self, rng):
        return int(rng.integers(0, 2**63 - 1))

    def _seeds(self, u):
        if self.replicas == 1:
            return [u]
        return np.random.SeedSequence(u).spawn(self.replicas)

    def evaluate(self, x, u, grad=True):
        x = self._check_x(x)
        if not np.all(np.isfinite(x)) or abs(x[1]) > 50:
            return NoisyEval(math.inf, None, u)
        model = self.model.with_theta(self.to_theta(x))
        logliks, scores = [], []
        for seed in self._seeds(u):
            ll, system = bootstrap_pf(model, self.y, self.N, seed, score=grad, resampling=self.resampling)
            if system.degenerate and grad:
                raise OracleFailure(f"degenerate particle weights at x={x}")
            logliks.append(ll)
            if grad:
                scores.append(system.score)
        per = -self.scale * np.asarray(logliks)
        g = None
        if grad:
            s = np.mean(scores, axis=0)
            # chain rule for the log-parameterised q
            g = -self.scale * np.array([s[0], s[1] * model.q])
        return NoisyEval(float(per.mean()), g, u, per if self.replicas > 1 else None)

    def full_cost(self, x, N=None, seed=0):
        """Cost estimate with a fixed seed and a larger particle count."""
        N = N or 5 * self.N
        model = self.model.with_theta(self.to_theta(self._check_x(x)))
        return -self.scale * bootstrap_pf(model, self.y, N, seed)[0]


def ssm_oracle(y, N=200, scale=None, replicas=1):
    return SSMOracle(y, N=N, scale=scale, replicas=replicas)
