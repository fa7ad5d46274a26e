"""Closed-form pieces of the exploratory dividend model.

Everything here is a pure function of its arguments. Scalar inputs return
floats, array inputs return arrays of the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

TOL_BRANCH = 1e-8
# series cutoff on s = a(1-y)/lam for f' and f'' (cancellation sets in far
# earlier than TOL_BRANCH for these two)
S_SERIES = 1e-3


class ConfigError(ValueError):
    """Invalid parameter combination."""


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class NoPositiveRoot(ArithmeticError):
    """Neither sufficient condition for a positive decay rate holds."""

    def __init__(self, F2, F1, F0):
        self.F2, self.F1, self.F0 = F2, F1, F0
        self.discriminant = F1 * F1 - 4.0 * F2 * F0
        super().__init__(
            f"no positive root: F2={F2:.6g} F1={F1:.6g} F0={F0:.6g} "
            f"disc={self.discriminant:.6g}")


@dataclass(frozen=True)
class EnvParams:
    mu1: float = 1.2
    mu2: float = 0.5
    sigma: float = 0.3
    q12: float = 0.36
    q21: float = 2.89
    delta1: float = 0.1
    delta2: float = 0.3

    def __post_init__(self):
        vals = asdict(self)
        if not all(math.isfinite(v) for v in vals.values()):
            raise ConfigError(f"non-finite environment parameter: {vals}")
        if self.mu1 == self.mu2:
            raise ConfigError("mu1 must differ from mu2")
        for name in ("sigma", "q12", "q21", "delta1", "delta2"):
            if vals[name] <= 0:
                raise ConfigError(f"{name} must be positive, got {vals[name]}")

    @property
    def stationary_p(self) -> float:
        return self.q21 / (self.q12 + self.q21)

    def env_vector(self) -> np.ndarray:
        """Reference vector (sigma^2, mu1, mu2, q21, q12) matched by exp(gamma)."""
        return np.array([self.sigma ** 2, self.mu1, self.mu2, self.q21, self.q12])


@dataclass(frozen=True)
class ControlConfig:
    cap_a: float = 1.0
    lam: float = 1.0
    horizon_T: float = 10.0
    dt: float = 1.0 / 252.0
    x0: float = 1.0
    p0: float = 0.5
    ruin_eps: float = 1e-8

    def __post_init__(self):
        if not (self.cap_a > 0 and self.lam > 0):
            raise ConfigError("cap_a and lam must be positive")
        if not (self.dt > 0 and self.horizon_T >= self.dt):
            raise ConfigError("need dt > 0 and horizon_T >= dt")
        if not 0.0 < self.p0 < 1.0:
            raise ConfigError("p0 must lie strictly inside (0, 1)")
        if self.x0 < 0 or self.ruin_eps <= 0:
            raise ConfigError("need x0 >= 0 and ruin_eps > 0")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon_T / self.dt + 1e-9))


@dataclass(frozen=True)
class CoefficientBundle:
    A: Callable
    B: Callable
    C: Callable
    D: Callable


def _scalar_out(fn):
    def wrapped(y, *args, **kw):
        out = fn(np.asarray(y, dtype=float), *args, **kw)
        return float(out) if np.ndim(out) == 0 else out
    wrapped.__name__ = fn.__name__
    wrapped.__doc__ = fn.__doc__
    return wrapped


def _log_abs_expm1(s):
    """log|e^s - 1| for s != 0, without overflow."""
    s = np.asarray(s, dtype=float)
    pos = s > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lp = s + np.log(-np.expm1(-np.where(pos, s, 1.0)))
        ln = np.log(-np.expm1(np.where(pos, -1.0, s)))
    return np.where(pos, lp, ln)


def _inv_expm1(s):
    """1/(e^s - 1) for s != 0, without overflow."""
    s = np.asarray(s, dtype=float)
    pos = s > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        sp = np.where(pos, s, 1.0)
        rp = np.exp(-sp) / (-np.expm1(-sp))
        rn = 1.0 / np.expm1(np.where(pos, -1.0, s))
    return np.where(pos, rp, rn)


@_scalar_out
def f_lambda(y, lam: float, cap_a: float):
    """lam * ln(lam (e^{a(1-y)/lam} - 1) / (1-y)), continuous at y = 1."""
    z = 1.0 - y
    near = np.abs(z) < TOL_BRANCH
    zs = np.where(near, 1.0, z)
    s = cap_a * zs / lam
    full = lam * (math.log(lam) + _log_abs_expm1(s) - np.log(np.abs(zs)))
    series = lam * math.log(cap_a) + cap_a * z / 2.0 + cap_a ** 2 * z ** 2 / (24.0 * lam)
    return np.where(near, series, full)


@_scalar_out
def f_lambda_prime(y, lam: float, cap_a: float):
    """Derivative of f_lambda; lies in (-a, 0) with value -a/2 at y = 1."""
    z = 1.0 - y
    s = cap_a * z / lam
    near = np.abs(s) < S_SERIES
    ss = np.where(near, 1.0, s)
    zs = np.where(near, 1.0, z)
    full = -(cap_a - lam / zs + cap_a * _inv_expm1(ss))
    # 1/(e^s-1) - 1/s = -1/2 + s/12 - s^3/720 + s^5/30240
    series = -cap_a / 2.0 - cap_a * (s / 12.0 - s ** 3 / 720.0 + s ** 5 / 30240.0)
    return np.where(near, series, full)


@_scalar_out
def f_lambda_second(y, lam: float, cap_a: float):
    """Second derivative of f_lambda (positive: f is convex)."""
    z = 1.0 - y
    s = cap_a * z / lam
    near = np.abs(s) < S_SERIES
    ss = np.where(near, 1.0, s)
    zs = np.where(near, 1.0, z)
    # e^s/(e^s-1)^2 = r(1+r) with r = 1/(e^s-1)
    r = _inv_expm1(ss)
    full = lam / zs ** 2 - cap_a ** 2 / lam * r * (1.0 + r)
    # e^s/(e^s-1)^2 - 1/s^2 = -1/12 + s^2/240 - s^4/6048
    series = cap_a ** 2 / lam * (1.0 / 12.0 - s ** 2 / 240.0 + s ** 4 / 6048.0)
    return np.where(near, series, full)


def gibbs_density(u, one_minus_vx, lam: float, cap_a: float):
    """Truncated-exponential density on [0, a] with rate (1 - v_x)/lam."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr > cap_a):
        raise DomainError("u must lie in [0, cap_a]")
    z = np.asarray(one_minus_vx, dtype=float)
    near = np.abs(z) < TOL_BRANCH
    zs = np.where(near, 1.0, z)
    s = cap_a * zs / lam
    # z and e^s - 1 share a sign, so work with |.| in log space
    with np.errstate(over="ignore"):
        dens = np.abs(zs) / lam * np.exp(u_arr * zs / lam - _log_abs_expm1(s))
    series = (1.0 + (u_arr - cap_a / 2.0) * z / lam) / cap_a
    out = np.where(near, series, dens)
    return float(out) if np.ndim(out) == 0 else out


def gibbs_cdf(u, one_minus_vx, lam: float, cap_a: float):
    u_arr = np.clip(np.asarray(u, dtype=float), 0.0, cap_a)
    z = np.asarray(one_minus_vx, dtype=float)
    near = np.abs(z) < TOL_BRANCH
    zs = np.where(near, 1.0, z)
    s = cap_a * zs / lam
    su = u_arr * zs / lam
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logc = np.where(su == 0.0, -np.inf, _log_abs_expm1(np.where(su == 0.0, 1.0, su)))
        full = np.exp(logc - _log_abs_expm1(s))
    out = np.where(near, u_arr / cap_a, full)
    return float(out) if np.ndim(out) == 0 else out


def sample_action(one_minus_vx, z, lam: float, cap_a: float):
    """Inverse-CDF draw from the Gibbs density using uniforms z."""
    zz = np.asarray(z, dtype=float)
    if np.any(zz < 0) or np.any(zz > 1):
        raise DomainError("z must lie in [0, 1]")
    th = np.asarray(one_minus_vx, dtype=float)
    near = np.abs(th) < TOL_BRANCH
    ths = np.where(near, 1.0, th)
    s = cap_a * ths / lam
    big = s > 30.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # large s: ln(z(e^s-1)+1) = s + ln(z(1-e^{-s}) + e^{-s}) avoids overflow
        sb = np.where(big, s, 1.0)
        lb = sb + np.log(zz * -np.expm1(-sb) + np.exp(-sb))
        ls = np.log1p(zz * np.expm1(np.where(big, 1.0, s)))
    u = lam * np.where(big, lb, ls) / ths
    out = np.where(near, cap_a * zz, np.clip(u, 0.0, cap_a))
    return float(out) if np.ndim(out) == 0 else out


def entropy_reward(vx, lam: float, cap_a: float):
    """Expected dividend plus lam * entropy under the Gibbs policy at v_x.

    Equals f(v_x) - v_x f'(v_x); the v_x = 1 value is a/2 + lam ln a.
    """
    v = np.asarray(vx, dtype=float)
    out = f_lambda(v, lam, cap_a) - v * f_lambda_prime(v, lam, cap_a)
    return float(out) if np.ndim(out) == 0 else out


def entropy_reward_sensitivity(vx, lam: float, cap_a: float):
    """d/dv_x of entropy_reward, i.e. -v_x f''(v_x); -a^2/(12 lam) at v_x = 1."""
    v = np.asarray(vx, dtype=float)
    out = -v * f_lambda_second(v, lam, cap_a)
    return float(out) if np.ndim(out) == 0 else out


def boundary_targets(env: EnvParams, lam: float, cap_a: float) -> tuple[float, float]:
    f0 = f_lambda(0.0, lam, cap_a)
    den = (env.delta1 + env.q12) * (env.delta2 + env.q21) - env.q12 * env.q21
    if den <= 0:
        raise ConfigError("boundary-target denominator must be positive")
    g0 = (env.delta1 + env.q12 + env.q21) * f0 / den
    g1 = (env.delta2 + env.q12 + env.q21) * f0 / den
    return g0, g1


def coefficients(env: EnvParams) -> CoefficientBundle:
    beta0 = (env.mu1 - env.mu2) ** 2 / env.sigma ** 2
    return CoefficientBundle(
        A=lambda p: beta0 * (np.asarray(p) * (1.0 - np.asarray(p))) ** 2,
        B=lambda p: env.q21 - (env.q12 + env.q21) * np.asarray(p),
        C=lambda p: env.delta2 + (env.delta1 - env.delta2) * np.asarray(p),
        D=lambda p: env.mu2 + (env.mu1 - env.mu2) * np.asarray(p),
    )


def kappa_from_quadratic(F2: float, F1: float, F0: float) -> float:
    """Positive root of F2 k^2 + F1 k + F0 = 0 under the sufficient conditions.

    Case F2*F0 < 0 has exactly one positive root. Otherwise a real pair with
    F1 < 0 is required and the larger positive root is returned.
    """
    F2, F1, F0 = float(F2), float(F1), float(F0)
    if not all(math.isfinite(v) for v in (F2, F1, F0)):
        raise NoPositiveRoot(F2, F1, F0)
    disc = F1 * F1 - 4.0 * F2 * F0
    case_i = F2 * F0 < 0
    case_ii = (not case_i) and disc >= 0 and F1 < 0
    if not (case_i or case_ii):
        raise NoPositiveRoot(F2, F1, F0)
    if F2 == 0.0:
        k = -F0 / F1
        if k > 0:
            return k
        raise NoPositiveRoot(F2, F1, F0)
    q = -0.5 * (F1 + math.copysign(math.sqrt(disc), F1))
    roots = [q / F2]
    if q != 0.0:
        roots.append(F0 / q)
    pos = [r for r in roots if r > 0 and math.isfinite(r)]
    if not pos:
        raise NoPositiveRoot(F2, F1, F0)
    return max(pos)


def value_surface(g1, g2, kappa1: float, kappa2: float, x):
    """v and v_x of the two-exponential ansatz given g_i already evaluated at p."""
    x = np.asarray(x, dtype=float)
    e1 = np.exp(-kappa1 * x)
    e2 = np.exp(-kappa2 * x)
    v = g1 * (1.0 - e1) + g2 * (1.0 - e2)
    vx = kappa1 * g1 * e1 + kappa2 * g2 * e2
    return v, vx
