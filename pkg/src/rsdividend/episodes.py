"""On-policy rollouts with filtering, shared by training and evaluation.

The time loop is compiled with numba. Random inputs (initial regime, regime
chain, market noise, action uniforms) are drawn up front from independent
per-path streams so results do not depend on batch composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import TOL_BRANCH, ControlConfig, EnvParams, gibbs_density
from .filtering import LOG_FLOOR
from .market import (STREAM_ACTION, STREAM_INIT, STREAM_NOISE, STREAM_REGIME,
                     initial_regime, path_rng, simulate_regime_chain)

RUIN, HORIZON = "ruin", "horizon"


@dataclass(frozen=True)
class PolicyTable:
    """Everything the rollout kernel needs to evaluate v_x(x, p).

    kind 0: g_i(p) = sum_jk coef[i, j, k] p^j (1-p)^k.
    kind 1: g_i linearly interpolated from (grid_p, grid_g[i]).
    """
    kind: int
    kappa: np.ndarray
    coef: np.ndarray
    grid_p: np.ndarray
    grid_g: np.ndarray


def theta_policy(model, theta, ks) -> PolicyTable:
    coef = np.stack([(model.f0 / model.deltas[0]) * np.exp(theta.phi1),
                     (model.f0 / model.deltas[1]) * np.exp(theta.phi2)])
    return PolicyTable(0, np.asarray(ks.kappa, dtype=float), coef,
                       np.zeros(2), np.zeros((2, 2)))


def fd_policy(fd) -> PolicyTable:
    return PolicyTable(1, np.array([fd.kappa1, fd.kappa2]), np.zeros((2, 1, 1)),
                       np.asarray(fd.p, dtype=float), np.stack([fd.g1, fd.g2]))


def filter_vector(env: EnvParams) -> np.ndarray:
    return np.array([env.mu1, env.mu2, env.sigma, env.q12, env.q21, env.delta1, env.delta2])


@numba.njit(cache=True)
def _g_values(kind, coef, grid_p, grid_g, p):
    out = np.zeros(2)
    if kind == 0:
        m1 = coef.shape[1]
        for i in range(2):
            acc = 0.0
            pj = 1.0
            for j in range(m1):
                qk = 1.0
                for k in range(m1):
                    acc += coef[i, j, k] * pj * qk
                    qk *= 1.0 - p
                pj *= p
            out[i] = acc
    else:
        for i in range(2):
            out[i] = np.interp(p, grid_p, grid_g[i])
    return out


@numba.njit(cache=True)
def _vx(kind, kappa, coef, grid_p, grid_g, x, p):
    g = _g_values(kind, coef, grid_p, grid_g, p)
    return kappa[0] * g[0] * math.exp(-kappa[0] * x) + kappa[1] * g[1] * math.exp(-kappa[1] * x)


@numba.njit(cache=True)
def _sample(th, z, lam, a):
    # scalar twin of core.sample_action
    if abs(th) < TOL_BRANCH:
        return a * z
    s = a * th / lam
    if s > 30.0:
        u = lam * (s + math.log(z * -math.expm1(-s) + math.exp(-s))) / th
    else:
        u = lam * math.log1p(z * math.expm1(s)) / th
    return min(max(u, 0.0), a)


@numba.njit(cache=True)
def _rollout(kind, kappa, coef, grid_p, grid_g, x0, p0, dt, lam, a, eps,
             mu_true, sigma_true, fv, regimes, noise, zs):
    n_paths, n = noise.shape
    X = np.zeros((n_paths, n + 1))
    P = np.zeros((n_paths, n + 1))
    U = np.zeros((n_paths, n))
    VX = np.zeros((n_paths, n))
    LAM = np.zeros((n_paths, n + 1))
    K = np.full(n_paths, n)
    ruined = np.zeros(n_paths, dtype=np.bool_)
    fmu1, fmu2, fsig, fq12, fq21, fd1, fd2 = fv[0], fv[1], fv[2], fv[3], fv[4], fv[5], fv[6]
    s_sig = (fmu1 - fmu2) / fsig
    qs = fq12 + fq21
    sq = math.sqrt(dt)
    for r in range(n_paths):
        x = x0
        l1 = math.log(p0)
        l2 = math.log1p(-p0)
        p = p0
        X[r, 0] = x
        P[r, 0] = p
        if not x > eps:
            K[r] = 0
            ruined[r] = True
            continue
        for k in range(n):
            vx = _vx(kind, kappa, coef, grid_p, grid_g, x, p)
            u = _sample(1.0 - vx, zs[r, k], lam, a)
            U[r, k] = u
            VX[r, k] = vx
            mu = mu_true[0] if regimes[r, k] == 1 else mu_true[1]
            xn = x + (mu - u) * dt + sigma_true * sq * noise[r, k]
            # innovation from the observed increment with dividends added back
            dw = (xn - x + u * dt - ((fmu1 - fmu2) * p + fmu2) * dt) / fsig
            e1 = math.exp(l1)
            e2 = math.exp(l2)
            n1 = l1 + math.log1p((fq21 * math.exp(-l1) - qs) * dt) \
                - 0.5 * s_sig * s_sig * (1.0 - e1) ** 2 * dt + s_sig * (1.0 - e1) * dw
            n2 = l2 + math.log1p((fq12 * math.exp(-l2) - qs) * dt) \
                - 0.5 * s_sig * s_sig * (1.0 - e2) ** 2 * dt - s_sig * (1.0 - e2) * dw
            mx = max(n1, n2)
            norm = mx + math.log(math.exp(n1 - mx) + math.exp(n2 - mx))
            l1 = max(n1 - norm, LOG_FLOOR)
            l2 = max(n2 - norm, LOG_FLOOR)
            LAM[r, k + 1] = LAM[r, k] + ((fd1 - fd2) * p + fd2) * dt
            mx = max(l1, l2)
            p = math.exp(l1 - mx) / (math.exp(l1 - mx) + math.exp(l2 - mx))
            x = xn
            P[r, k + 1] = p
            if x < eps:
                X[r, k + 1] = 0.0
                K[r] = k + 1
                ruined[r] = True
                break
            X[r, k + 1] = x
    return X, P, U, VX, LAM, K, ruined


@dataclass
class PathInputs:
    regimes: np.ndarray     # (n_paths, n+1) int8
    noise: np.ndarray       # (n_paths, n) standard normals
    z: np.ndarray           # (n_paths, n) action uniforms


def path_inputs(env: EnvParams, cfg: ControlConfig, seed: int, indices) -> PathInputs:
    n = cfg.n_steps
    idx = list(indices)
    reg = np.empty((len(idx), n + 1), dtype=np.int8)
    noise = np.empty((len(idx), n))
    z = np.empty((len(idx), n))
    for r, i in enumerate(idx):
        start = initial_regime(cfg.p0, path_rng(seed, i, STREAM_INIT))
        reg[r] = simulate_regime_chain(env, n, cfg.dt, path_rng(seed, i, STREAM_REGIME), start)
        noise[r] = path_rng(seed, i, STREAM_NOISE).standard_normal(n)
        z[r] = path_rng(seed, i, STREAM_ACTION).random(n)
    return PathInputs(reg, noise, z)


@dataclass
class Rollouts:
    """Batch of episodes; entries past each stop index are zero."""
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    vx: np.ndarray
    Lambda: np.ndarray
    K: np.ndarray
    ruined: np.ndarray
    regimes: np.ndarray
    dt: float

    def __len__(self):
        return len(self.K)

    def episode(self, r: int) -> "Episode":
        k = int(self.K[r])
        return Episode(t=np.arange(k + 1) * self.dt, x=self.x[r, :k + 1].copy(),
                       p=self.p[r, :k + 1].copy(), u=self.u[r, :k].copy(),
                       vx=self.vx[r, :k].copy(), Lambda=self.Lambda[r, :k + 1].copy(),
                       termination=RUIN if self.ruined[r] else HORIZON, dt=self.dt)


def rollout(policy: PolicyTable, env_true: EnvParams, env_filter: EnvParams,
            cfg: ControlConfig, seed: int, indices) -> Rollouts:
    inp = path_inputs(env_true, cfg, seed, indices)
    X, P, U, VX, LAM, K, ruined = _rollout(
        policy.kind, policy.kappa, policy.coef, policy.grid_p, policy.grid_g,
        cfg.x0, cfg.p0, cfg.dt, cfg.lam, cfg.cap_a, cfg.ruin_eps,
        np.array([env_true.mu1, env_true.mu2]), env_true.sigma, filter_vector(env_filter),
        inp.regimes, inp.noise, inp.z)
    return Rollouts(X, P, U, VX, LAM, K, ruined, inp.regimes, cfg.dt)


@dataclass
class Episode:
    t: np.ndarray
    x: np.ndarray           # x_0..x_K
    p: np.ndarray           # p_0..p_K
    u: np.ndarray           # u_0..u_{K-1}
    vx: np.ndarray          # v_x at the visited states 0..K-1
    Lambda: np.ndarray      # discount accumulator 0..K
    termination: str
    dt: float

    @property
    def K(self) -> int:
        return len(self.u)


def policy_density_bounds(vx_bound: float, lam: float, cap_a: float) -> tuple[float, float]:
    """Lower and upper bound of the Gibbs density over u in [0, a] and |v_x| <= vx_bound."""
    # the density at u = a rises with 1 - v_x, the density at u = 0 falls with it
    lo_th, hi_th = 1.0 - vx_bound, 1.0 + vx_bound
    lo = min(gibbs_density(cap_a, lo_th, lam, cap_a), gibbs_density(0.0, hi_th, lam, cap_a))
    hi = max(gibbs_density(cap_a, hi_th, lam, cap_a), gibbs_density(0.0, lo_th, lam, cap_a))
    return lo, hi
