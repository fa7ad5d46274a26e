"""Discretised Wonham filter in log coordinates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EnvParams

LOG_FLOOR = -700.0


@dataclass(frozen=True)
class BeliefState:
    log_p1: float
    log_p2: float

    @classmethod
    def from_p(cls, p: float) -> "BeliefState":
        if not 0.0 < p < 1.0:
            raise ValueError("belief must lie strictly inside (0, 1)")
        return cls(float(np.log(p)), float(np.log1p(-p)))

    @property
    def p(self) -> float:
        return float(belief_from_logs(self.log_p1, self.log_p2))


def belief_from_logs(l1, l2):
    m = np.maximum(l1, l2)
    e1 = np.exp(l1 - m)
    return e1 / (e1 + np.exp(l2 - m))


def innovation_increment(dx, p_prev, env: EnvParams, dt: float):
    """(dx - mu_hat dt) / sigma with mu_hat the belief-weighted drift."""
    mu_hat = (env.mu1 - env.mu2) * p_prev + env.mu2
    return (dx - mu_hat * dt) / env.sigma


def wonham_logs(l1, l2, dW_hat, env: EnvParams, dt: float):
    """One step of both log coordinates; works elementwise on arrays.

    The rate part q21/p - (q12+q21) enters as log1p of its dt-increment, which
    matches the plain Euler term to first order but cannot push p out of (0, 1)
    when p is tiny. The pair is renormalised so that it stays (log p, log(1-p)).
    """
    s = (env.mu1 - env.mu2) / env.sigma
    qs = env.q12 + env.q21
    e1 = np.exp(l1)
    e2 = np.exp(l2)
    n1 = l1 + np.log1p((env.q21 * np.exp(-l1) - qs) * dt) - 0.5 * s * s * (1.0 - e1) ** 2 * dt \
        + s * (1.0 - e1) * dW_hat
    n2 = l2 + np.log1p((env.q12 * np.exp(-l2) - qs) * dt) - 0.5 * s * s * (1.0 - e2) ** 2 * dt \
        - s * (1.0 - e2) * dW_hat
    norm = np.logaddexp(n1, n2)
    return np.maximum(n1 - norm, LOG_FLOOR), np.maximum(n2 - norm, LOG_FLOOR)


def wonham_step(belief: BeliefState, dW_hat: float, env: EnvParams, dt: float) -> BeliefState:
    n1, n2 = wonham_logs(belief.log_p1, belief.log_p2, dW_hat, env, dt)
    return BeliefState(float(n1), float(n2))


def filtered_discount_step(p, env: EnvParams, dt: float):
    """delta_hat * dt with delta_hat = (delta1 - delta2) p + delta2."""
    return ((env.delta1 - env.delta2) * p + env.delta2) * dt


def run_filter(surplus, env: EnvParams, dt: float, p0: float, dividends=None) -> np.ndarray:
    """Belief path p_0..p_n for an observed surplus path.

    Paid dividends are known to the controller and are added back before
    forming the innovation.
    """
    x = np.asarray(surplus, dtype=float)
    dx = np.diff(x)
    if dividends is not None:
        dx = dx + np.asarray(dividends, dtype=float)[:len(dx)] * dt
    out = np.empty(len(x))
    b = BeliefState.from_p(p0)
    l1, l2 = b.log_p1, b.log_p2
    out[0] = p0
    for k in range(len(dx)):
        p = belief_from_logs(l1, l2)
        dw = innovation_increment(dx[k], p, env, dt)
        l1, l2 = wonham_logs(l1, l2, dw, env, dt)
        out[k + 1] = belief_from_logs(l1, l2)
    return out


def run_filter_batch(surplus, env: EnvParams, dt: float, p0: float) -> np.ndarray:
    """Vectorised over rows of a (n_paths, n+1) surplus array."""
    x = np.asarray(surplus, dtype=float)
    dx = np.diff(x, axis=1)
    out = np.empty_like(x)
    b = BeliefState.from_p(p0)
    l1 = np.full(x.shape[0], b.log_p1)
    l2 = np.full(x.shape[0], b.log_p2)
    out[:, 0] = p0
    for k in range(dx.shape[1]):
        p = belief_from_logs(l1, l2)
        l1, l2 = wonham_logs(l1, l2, innovation_increment(dx[:, k], p, env, dt), env, dt)
        out[:, k + 1] = belief_from_logs(l1, l2)
    return out
