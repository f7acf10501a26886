"""Stochastic quasi-Newton iteration with a Markov-chain line search.

Each call to :func:`step` is one transition of the chain over (iterate,
step length, auxiliary variable):

* if the previous proposal was accepted, draw a fresh noisy gradient and
  compute a new search direction from the curvature memory;
* propose ``xi = x + alpha p``;
* accept with probability ``max(rho, a)`` where ``a`` is 1 for a cost decrease
  and a Gaussian tail probability otherwise;
* on acceptance move to ``xi`` and reset the step length to its ceiling, on
  rejection keep ``x`` and ``p`` and shrink the step length by ``kappa``.

With ``rho = 1`` every proposal is accepted and the step length decays as
``alpha_bar / k``, recovering a plain stochastic-gradient schedule.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .curvature import GRAD_TOL, CurvatureMemory
from .errors import EmptyBatch, NonFiniteIterate
from .problems import NoisyEval
from .trace import RunTrace, StepRecord, extract_estimate, tail_length

__all__ = [
    "OptimizerConfig",
    "OptimizerState",
    "acceptance_probability",
    "estimate_sigma2",
    "init_state",
    "step",
    "run",
    "extract_estimate",
]

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class OptimizerConfig:
    rho: int = 0
    kappa: float = 0.5
    alpha_bar0: float = 1.0
    alpha_decay: bool = False
    k_max: int = 1000
    memory: int = 10
    lam: float = 0.1
    sigma2_floor: float = 1e-12
    max_rejects: int = 30
    alpha_min: float = 1e-10
    refactor_every: int = 64
    seed: int = 0
    store_iterates: bool = True
    # "common": y = g(x', u') - g(x, u'), one extra gradient per accepted move.
    # "fresh": y = g(x', u') - g(x, u) reusing the direction gradient.
    pair_gradient: str = "common"

    def __post_init__(self):
        if self.rho not in (0, 1):
            raise ValueError("rho must be 0 or 1")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if not self.alpha_bar0 > 0:
            raise ValueError("alpha_bar0 must be positive")
        if self.rho == 0 and self.alpha_bar0 > 1.0:
            raise ValueError("alpha_bar0 must not exceed 1 when rho = 0")
        if self.k_max < 1 or self.memory < 1 or self.max_rejects < 1:
            raise ValueError("k_max, memory and max_rejects must be positive")
        if not (self.lam > 0 and self.sigma2_floor > 0 and self.alpha_min > 0):
            raise ValueError("lam, sigma2_floor and alpha_min must be positive")
        if self.pair_gradient not in ("common", "fresh"):
            raise ValueError("pair_gradient must be 'common' or 'fresh'")

    def alpha_bar(self, k):
        """Step-length ceiling at iteration k."""
        if self.alpha_decay:
            return self.alpha_bar0 / k
        return self.alpha_bar0


@dataclass
class OptimizerState:
    x: np.ndarray
    mem: CurvatureMemory
    rng: np.random.Generator
    alpha: float
    k: int = 1
    p: Optional[np.ndarray] = None
    f: float = math.nan
    reject_streak: int = 0
    sigma2: float = 0.0
    last_eval: Optional[NoisyEval] = None
    n_evals: int = 0
    direction_violations: int = 0
    n_forced: int = 0
    extra: dict = field(default_factory=dict)


def acceptance_probability(epsilon, sigma2, sigma2_floor=1e-12):
    """Probability of accepting a proposal that changes the cost by ``epsilon``.

    Equals 1 for a decrease and ``Phi(-epsilon / sigma)`` otherwise. At the
    variance floor the rule is plain descent: accept iff ``epsilon <= 0``.
    """
    if epsilon < 0:
        return 1.0
    if sigma2 <= sigma2_floor:
        return 1.0 if epsilon == 0 else 0.0
    return 0.5 * math.erfc(epsilon / (math.sqrt(sigma2) * _SQRT2))


def estimate_sigma2(diffs, b=None, sigma2_floor=1e-12):
    """Variance of the minibatch mean of ``diffs`` (sample variance / b)."""
    diffs = np.asarray(diffs, dtype=float)
    if diffs.size == 0:
        raise EmptyBatch("no per-sample values to estimate a variance from")
    b = diffs.size if b is None else int(b)
    if b != diffs.size:
        raise ValueError(f"batch size {b} does not match {diffs.size} samples")
    if b == 1:
        return sigma2_floor
    return max(float(np.var(diffs, ddof=1)) / b, sigma2_floor)


def init_state(oracle, cfg, x0):
    x0 = np.array(x0, dtype=float, copy=True)
    if x0.shape != (oracle.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, oracle expects ({oracle.dim},)")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteIterate("x0 is not finite")
    mem = CurvatureMemory(oracle.dim, cfg.memory, cfg.lam, refactor_every=cfg.refactor_every)
    return OptimizerState(
        x=x0, mem=mem, rng=np.random.default_rng(cfg.seed), alpha=cfg.alpha_bar(1)
    )


def _evaluate(state, oracle, x, u, grad):
    state.n_evals += 1
    return oracle.evaluate(x, u, grad=grad)


def _new_direction(state, oracle):
    if state.last_eval is None:
        u = oracle.sample_u(state.rng)
        state.last_eval = _evaluate(state, oracle, state.x, u, True)
        state.f = state.last_eval.f
    g = state.last_eval.g
    p = state.mem.search_direction(g)
    if np.linalg.norm(g) > GRAD_TOL and not p @ g < 0:
        state.direction_violations += 1
    state.p = p


def _acceptance_test(state, oracle, cfg, xi):
    u = oracle.sample_u(state.rng)
    ev_xi = _evaluate(state, oracle, xi, u, False)
    ev_x = _evaluate(state, oracle, state.x, u, False)
    eps = ev_xi.f - ev_x.f
    if ev_xi.per_sample_f is not None and ev_x.per_sample_f is not None:
        sigma2 = estimate_sigma2(ev_xi.per_sample_f - ev_x.per_sample_f, sigma2_floor=cfg.sigma2_floor)
    else:
        sigma2 = cfg.sigma2_floor
    state.sigma2 = sigma2
    a = acceptance_probability(eps, sigma2, cfg.sigma2_floor)
    if a >= 1.0:
        c = True
    elif a <= 0.0:
        c = False
    else:
        c = bool(state.rng.random() < a)
    return c, ev_xi, ev_x


def step(state, oracle, cfg):
    """Advance the chain by one proposal. Mutates ``state``; returns the record."""
    if state.p is None:
        _new_direction(state, oracle)

    k = state.k
    alpha = state.alpha
    p = state.p
    forced = state.reject_streak >= cfg.max_rejects or alpha < cfg.alpha_min

    if forced:
        # Give up on this direction: accept a zero move and resample the gradient.
        state.n_forced += 1
        c = True
        x_new = state.x
        f_rec = state.f
    else:
        xi = state.x + alpha * p
        if cfg.rho == 1:
            c = True
            f_rec = None
        else:
            c, ev_xi, ev_x = _acceptance_test(state, oracle, cfg, xi)
            f_rec = ev_xi.f if c else ev_x.f
        x_new = xi if c else state.x

    if not np.all(np.isfinite(x_new)):
        raise NonFiniteIterate(f"iterate became non-finite at k={k}")

    if c:
        moved = not forced and np.any(x_new != state.x)
        if moved:
            u = oracle.sample_u(state.rng)
            ev_new = _evaluate(state, oracle, x_new, u, True)
            if cfg.pair_gradient == "common":
                g_old = _evaluate(state, oracle, state.x, u, True).g
            else:
                g_old = state.last_eval.g
            state.mem.push_pair(alpha * p, ev_new.g - g_old)
            state.last_eval = ev_new
            state.f = ev_new.f
            f_rec = ev_new.f
        else:
            state.last_eval = None
            if f_rec is None:
                f_rec = state.f
        state.x = x_new
        state.p = None
        state.reject_streak = 0
        state.alpha = cfg.alpha_bar(k) / k**cfg.rho
    else:
        state.reject_streak += 1
        state.alpha = cfg.kappa * alpha

    state.k = k + 1
    return StepRecord(k, float(f_rec), float(alpha), bool(c))


def run(oracle, cfg, x0, clock: Optional[Callable[[], float]] = time.perf_counter, budget_s=None):
    """Run ``cfg.k_max`` proposals from ``x0`` and return the trace.

    ``clock=None`` records zero elapsed time, which makes traces byte-stable.
    A wall-clock ``budget_s`` stops the run early and marks it truncated.
    """
    state = init_state(oracle, cfg, x0)
    trace = _empty_trace(cfg.k_max, cfg.store_iterates, "alg1")
    t0 = clock() if clock is not None else 0.0
    for _ in range(cfg.k_max):
        elapsed = clock() - t0 if clock is not None else 0.0
        if budget_s is not None and len(trace) and elapsed > budget_s:
            trace.truncated = True
            break
        rec = step(state, oracle, cfg)
        elapsed = clock() - t0 if clock is not None else 0.0
        trace.append(rec._replace(elapsed_s=elapsed), state.x)
    trace.state = state
    return trace


def _empty_trace(k_max, store_iterates, method, tail_fraction=0.2):
    if store_iterates:
        return RunTrace(method=method)
    return RunTrace(
        iterates=None, tail_start=k_max - tail_length(k_max, tail_fraction) + 1, method=method
    )
