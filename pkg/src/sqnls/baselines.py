"""First-order reference methods: SGD, Adam and SVRG.

All three draw their auxiliary variables from a generator seeded with
``cfg.seed`` in the same order, so SGD and Adam runs with equal seeds see
exactly the same sequence of noisy gradients.
"""

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteIterate
from .optimizer import _empty_trace
from .trace import StepRecord

__all__ = [
    "BaselineConfig",
    "AdamState",
    "sgd_step",
    "adam_step",
    "svrg_direction",
    "run_baseline",
    "svrg_run",
]


@dataclass(frozen=True)
class BaselineConfig:
    method: str = "sgd"
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epoch_length: Optional[int] = None
    k_max: int = 1000
    seed: int = 0
    store_iterates: bool = True

    def __post_init__(self):
        if self.method not in ("sgd", "adam", "svrg"):
            raise ValueError(f"unknown baseline method {self.method!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam moment weights must lie in [0, 1)")


def sgd_step(x, g, eta):
    return x - eta * g


@dataclass
class AdamState:
    x: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, x):
        x = np.array(x, dtype=float, copy=True)
        return cls(x, np.zeros_like(x), np.zeros_like(x))


def adam_step(state, g, cfg):
    """One bias-corrected Adam update (Kingma & Ba). Returns a new state."""
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    x = state.x - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
    return AdamState(x, m, v, t)


def svrg_direction(oracle, x, x_snap, mu, u):
    """Variance-reduced gradient ``g_u(x) - g_u(x_snap) + mu``."""
    return oracle.evaluate(x, u).g - oracle.evaluate(x_snap, u).g + mu


def _check(x, k):
    if not np.all(np.isfinite(x)):
        raise NonFiniteIterate(f"iterate became non-finite at k={k}")


def run_baseline(oracle, cfg, x0, clock=time.perf_counter, budget_s=None):
    """Run SGD or Adam (or dispatch to :func:`svrg_run`).

    The recorded cost is the noisy cost at the iterate where the gradient
    was drawn.
    """
    if cfg.method == "svrg":
        return svrg_run(oracle, cfg, x0, clock=clock, budget_s=budget_s)
    rng = np.random.default_rng(cfg.seed)
    trace = _empty_trace(cfg.k_max, cfg.store_iterates, cfg.method)
    adam = AdamState.zeros(x0)
    x = adam.x
    t0 = clock() if clock else 0.0
    for k in range(1, cfg.k_max + 1):
        if budget_s is not None and clock and len(trace) and clock() - t0 > budget_s:
            trace.truncated = True
            break
        ev = oracle.evaluate(x, oracle.sample_u(rng))
        if cfg.method == "sgd":
            x = sgd_step(x, ev.g, cfg.eta)
        else:
            adam = adam_step(adam, ev.g, cfg)
            x = adam.x
        _check(x, k)
        elapsed = clock() - t0 if clock else 0.0
        trace.append(StepRecord(k, float(ev.f), cfg.eta, True, elapsed), x)
    return trace


def svrg_run(oracle, cfg, x0, clock=time.perf_counter, budget_s=None):
    """SVRG of Johnson & Zhang.

    The oracle must provide ``full_gradient(x)`` and expose ``n`` and
    ``batch_size``. Each epoch takes a snapshot at the current iterate,
    computes the full gradient there and runs ``epoch_length`` (default
    ``2n/b``) inner steps; the last inner iterate becomes the next snapshot.
    Only inner steps count towards ``k_max``.
    """
    rng = np.random.default_rng(cfg.seed)
    trace = _empty_trace(cfg.k_max, cfg.store_iterates, "svrg")
    epoch = cfg.epoch_length or max(1, math.ceil(2 * oracle.n / oracle.batch_size))
    x = np.array(x0, dtype=float, copy=True)
    t0 = clock() if clock else 0.0
    k = 0
    while k < cfg.k_max:
        x_snap = x.copy()
        mu = oracle.full_gradient(x_snap)
        for _ in range(epoch):
            if k >= cfg.k_max:
                break
            if budget_s is not None and clock and len(trace) and clock() - t0 > budget_s:
                trace.truncated = True
                return trace
            k += 1
            u = oracle.sample_u(rng)
            ev = oracle.evaluate(x, u)
            direction = ev.g - oracle.evaluate(x_snap, u).g + mu
            x = x - cfg.eta * direction
            _check(x, k)
            elapsed = clock() - t0 if clock else 0.0
            trace.append(StepRecord(k, float(ev.f), cfg.eta, True, elapsed), x)
    return trace
