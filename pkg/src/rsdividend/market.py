"""Hidden two-state regime chain and the surplus diffusion it drives."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, ControlConfig, EnvParams

# independent streams per path
STREAM_REGIME, STREAM_NOISE, STREAM_ACTION, STREAM_INIT = 0, 1, 2, 3


def path_rng(seed: int, path_idx: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, path index, stream)."""
    ss = np.random.SeedSequence([int(seed), int(path_idx), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class RawPath:
    times: np.ndarray
    surplus: np.ndarray
    regimes: np.ndarray
    increments: np.ndarray     # Brownian increments, one per step (last entry 0)
    dividends: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not all(len(a) == n for a in (self.surplus, self.regimes, self.increments, self.dividends)):
            raise ValueError("RawPath arrays must have equal length")

    @property
    def alive(self) -> bool:
        return bool(self.surplus[-1] > 0)


def simulate_regime_chain_rates(q12: float, q21: float, n_steps: int, dt: float,
                                rng: np.random.Generator, start: int = 1) -> np.ndarray:
    """Regime (1 or 2) at t_k = k dt for k = 0..n_steps from exponential clocks."""
    if q12 < 0 or q21 < 0:
        raise ConfigError("transition rates must be nonnegative")
    if q12 * dt >= 1 or q21 * dt >= 1:
        raise ConfigError("need q_ij * dt < 1")
    if start not in (1, 2):
        raise ValueError("start must be 1 or 2")
    T = n_steps * dt
    out = np.empty(n_steps + 1, dtype=np.int8)
    t, state, k = 0.0, start, 0
    while k <= n_steps:
        rate = q12 if state == 1 else q21
        hold = rng.exponential(1.0 / rate) if rate > 0 else np.inf
        t_next = t + hold
        # grid indices with k*dt < t_next stay in the current state
        k_end = n_steps + 1 if t_next > T else min(n_steps + 1, int(np.ceil(t_next / dt - 1e-12)))
        k_end = max(k_end, k)
        out[k:k_end] = state
        k = k_end
        t = t_next
        state = 3 - state
    return out


def simulate_regime_chain(env: EnvParams, n_steps: int, dt: float, rng: np.random.Generator,
                          start: int = 1) -> np.ndarray:
    return simulate_regime_chain_rates(env.q12, env.q21, n_steps, dt, rng, start)


def initial_regime(p0: float, rng: np.random.Generator) -> int:
    return 1 if rng.random() < p0 else 2


def simulate_surplus(env: EnvParams, cfg: ControlConfig, regimes, dividends,
                     rng: np.random.Generator | None = None, noise=None) -> RawPath:
    """Euler-Maruyama surplus under given per-step dividend rates, absorbed at ruin."""
    regimes = np.asarray(regimes)
    n = len(regimes) - 1
    u = np.broadcast_to(np.asarray(dividends, dtype=float), (n,)).copy()
    if np.any(u < 0) or np.any(u > cfg.cap_a + 1e-12):
        raise ValueError("dividend rates must lie in [0, cap_a]")
    if noise is None:
        noise = rng.standard_normal(n)
    dt = cfg.dt
    mu = np.where(regimes[:-1] == 1, env.mu1, env.mu2)
    x = np.empty(n + 1)
    x[0] = cfg.x0
    paid = np.zeros(n + 1)
    dW = np.sqrt(dt) * np.asarray(noise, dtype=float)
    alive = cfg.x0 > cfg.ruin_eps
    for k in range(n):
        if not alive:
            x[k + 1] = 0.0
            continue
        paid[k] = u[k]
        x[k + 1] = x[k] + (mu[k] - u[k]) * dt + env.sigma * dW[k]
        if x[k + 1] <= cfg.ruin_eps:
            x[k + 1] = 0.0
            alive = False
    if not cfg.x0 > cfg.ruin_eps:
        x[:] = 0.0
    times = np.arange(n + 1) * dt
    return RawPath(times=times, surplus=x, regimes=regimes.astype(np.int8),
                   increments=np.append(dW, 0.0), dividends=paid)


def simulate_uncontrolled_paths(env: EnvParams, cfg: ControlConfig, years: float,
                                n_paths: int, seed: int, first_index: int = 0,
                                stream_base: int = 0):
    """Batch of u = 0 paths (no ruin check; used as estimation history).

    ``stream_base`` shifts the stream ids so histories never share draws with
    episodes generated from the same seed.
    """
    n = int(round(years / cfg.dt))
    out = []
    for i in range(first_index, first_index + n_paths):
        start = initial_regime(cfg.p0, path_rng(seed, i, stream_base + STREAM_INIT))
        reg = simulate_regime_chain(env, n, cfg.dt, path_rng(seed, i, stream_base + STREAM_REGIME), start)
        xi = path_rng(seed, i, stream_base + STREAM_NOISE).standard_normal(n)
        mu = np.where(reg[:-1] == 1, env.mu1, env.mu2)
        dW = np.sqrt(cfg.dt) * xi
        x = cfg.x0 + np.concatenate([[0.0], np.cumsum(mu * cfg.dt + env.sigma * dW)])
        out.append(RawPath(times=np.arange(n + 1) * cfg.dt, surplus=x, regimes=reg,
                           increments=np.append(dW, 0.0), dividends=np.zeros(n + 1)))
    return out


def write_paths_csv(paths, path, first_index: int = 0):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path_id", "k", "t", "x", "regime", "u"])
        for j, rp in enumerate(paths):
            for k in range(len(rp.times)):
                wr.writerow([first_index + j, k, repr(float(rp.times[k])), repr(float(rp.surplus[k])),
                             int(rp.regimes[k]), repr(float(rp.dividends[k]))])
