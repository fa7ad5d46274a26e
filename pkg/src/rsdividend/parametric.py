"""Parametric value/policy family theta = (gamma, phi) and its analytic gradients.

Flat parameter layout used everywhere: ``[gamma(5), phi1.ravel(), phi2.ravel()]``
with ``phi[j, k]`` multiplying ``p**j * (1-p)**k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (DomainError, NoPositiveRoot, f_lambda, f_lambda_prime,
                   kappa_from_quadratic)

N_GAMMA = 5


@dataclass
class ThetaParams:
    gamma: np.ndarray
    phi1: np.ndarray
    phi2: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(N_GAMMA)
        self.phi1 = np.atleast_2d(np.asarray(self.phi1, dtype=float))
        self.phi2 = np.atleast_2d(np.asarray(self.phi2, dtype=float))
        m1 = self.phi1.shape[0]
        if self.phi1.shape != (m1, m1) or self.phi2.shape != (m1, m1):
            raise ValueError("phi grids must both be (m+1) x (m+1)")
        if not np.all(np.isfinite(self.flat())):
            raise ValueError("theta has non-finite entries")

    @property
    def m(self) -> int:
        return self.phi1.shape[0] - 1

    @property
    def size(self) -> int:
        return N_GAMMA + 2 * self.phi1.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.phi1.ravel(), self.phi2.ravel()])

    @classmethod
    def from_flat(cls, vec, m: int = 2) -> "ThetaParams":
        vec = np.asarray(vec, dtype=float)
        n = (m + 1) ** 2
        if vec.size != N_GAMMA + 2 * n:
            raise ValueError(f"expected {N_GAMMA + 2 * n} entries, got {vec.size}")
        return cls(vec[:N_GAMMA], vec[N_GAMMA:N_GAMMA + n].reshape(m + 1, m + 1),
                   vec[N_GAMMA + n:].reshape(m + 1, m + 1))

    @classmethod
    def initial(cls, m: int = 2, phi0: float = -3.0,
                gamma0=(np.log(0.07), 0.0, 0.0, 0.0, 0.0)) -> "ThetaParams":
        return cls(np.array(gamma0), np.full((m + 1, m + 1), phi0),
                   np.full((m + 1, m + 1), phi0))

    def to_dict(self) -> dict:
        return {"m": self.m, "gamma": self.gamma.tolist(),
                "phi1": self.phi1.tolist(), "phi2": self.phi2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThetaParams":
        return cls(np.array(d["gamma"]), np.array(d["phi1"]), np.array(d["phi2"]))


def poly_basis(p, m: int) -> np.ndarray:
    """Rows p^j (1-p)^k for j, k = 0..m, flattened j-major."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p < 0) or np.any(p > 1):
        raise DomainError("p must lie in [0, 1]")
    j = np.arange(m + 1)
    pw = p[:, None] ** j[None, :]
    qw = (1.0 - p)[:, None] ** j[None, :]
    return (pw[:, :, None] * qw[:, None, :]).reshape(p.size, (m + 1) ** 2)


def parametric_g(theta: ThetaParams, deltas, lam: float, cap_a: float, p, i: int):
    """g_i^phi(p) and its gradient in the phi^(i) block (shape (..., (m+1)^2))."""
    phi = theta.phi1 if i == 1 else theta.phi2
    scale = f_lambda(0.0, lam, cap_a) / deltas[i - 1]
    dg = scale * poly_basis(p, theta.m) * np.exp(phi.ravel())[None, :]
    g = dg.sum(axis=1)
    if np.ndim(p) == 0:
        return float(g[0]), dg[0]
    return g, dg


def _beta(gamma):
    c = np.exp(gamma)
    d = c[1] - c[2]
    b0 = d * d / c[0]
    if not (np.isfinite(b0) and b0 > 0):
        raise NoPositiveRoot(np.nan, np.nan, np.nan)
    b1 = 2.0 * (c[3] - c[4]) / b0
    db0 = np.zeros(N_GAMMA)
    db0[0] = -b0
    db0[1] = 2.0 * c[1] / d * b0
    db0[2] = -2.0 * c[2] / d * b0
    db1 = -b1 / b0 * db0
    db1[3] = 2.0 * c[3] / b0
    db1[4] = -2.0 * c[4] / b0
    return c, b0, b1, db0, db1


@dataclass
class WeightState:
    p: np.ndarray          # interior nodes
    dp: float
    w: np.ndarray
    phi: np.ndarray        # (p(1-p)w)'
    xi: np.ndarray         # (5, n) d ln w / d gamma_j, normalisation included
    dphi: np.ndarray       # (5, n) d Phi / d gamma_j


def parametric_w(gamma, n_grid: int = 2000) -> WeightState:
    """Parametric adjoint weight on the interior of a uniform grid with n_grid cells.

    Integrals against w are Riemann sums over interior nodes, i.e. the
    trapezoid rule with w = 0 at both endpoints.
    """
    gamma = np.asarray(gamma, dtype=float)
    c, b0, b1, db0, db1 = _beta(gamma)
    dp = 1.0 / n_grid
    p = np.arange(1, n_grid) * dp
    q = 1.0 - p
    lp, lq = np.log(p), np.log(q)
    s = c[3] / p + c[4] / q
    L = (b1 - 2.0) * lp - (b1 + 2.0) * lq - 2.0 / b0 * s
    e = np.exp(L - L.max())
    w = e / (e.sum() * dp)
    dL_ln = (b1 - 2.0) / p + (b1 + 2.0) / q + 2.0 / b0 * (c[3] / p ** 2 - c[4] / q ** 2)
    phi = w * ((1.0 - 2.0 * p) + p * q * dL_ln)

    one3 = np.zeros(N_GAMMA); one3[3] = 1.0
    one4 = np.zeros(N_GAMMA); one4[4] = 1.0
    s2 = c[3] / p ** 2 - c[4] / q ** 2
    dL = (db1[:, None] * (lp - lq)[None, :]
          + (2.0 * db0 / b0 ** 2)[:, None] * s[None, :]
          - 2.0 / b0 * (one3[:, None] * (c[3] / p)[None, :]
                        + one4[:, None] * (c[4] / q)[None, :]))
    xi = dL - (dL * w[None, :]).sum(axis=1, keepdims=True) * dp
    dxi_p = (db1[:, None] * (1.0 / p + 1.0 / q)[None, :]
             - (2.0 * db0 / b0 ** 2)[:, None] * s2[None, :]
             + 2.0 / b0 * (one3[:, None] * (c[3] / p ** 2)[None, :]
                           - one4[:, None] * (c[4] / q ** 2)[None, :]))
    dphi = phi[None, :] * xi + (p * q * w)[None, :] * dxi_p
    return WeightState(p=p, dp=dp, w=w, phi=phi, xi=xi, dphi=dphi)


@dataclass
class KappaState:
    kappa: np.ndarray                 # (2,)
    dkappa: np.ndarray                # (2, n_theta)
    F: np.ndarray                     # (2, 3) rows (F2, F1, F0)
    dF: np.ndarray = field(repr=False)  # (2, 3, n_theta)


class ParametricModel:
    """Binds the fixed model constants needed to turn theta into v, v_x and kappa."""

    def __init__(self, deltas, lam: float, cap_a: float, n_grid: int = 2000, m: int = 2):
        self.deltas = (float(deltas[0]), float(deltas[1]))
        self.lam = float(lam)
        self.cap_a = float(cap_a)
        self.n_grid = int(n_grid)
        self.m = int(m)
        self.f0 = f_lambda(0.0, lam, cap_a)
        self.fp0 = f_lambda_prime(0.0, lam, cap_a)
        self.nb = (m + 1) ** 2
        self.n_theta = N_GAMMA + 2 * self.nb

    def block(self, i: int) -> slice:
        start = N_GAMMA + (i - 1) * self.nb
        return slice(start, start + self.nb)

    def g_and_grad(self, theta: ThetaParams, p):
        """g_i(p) for i=1,2 as (2, n) and gradients as (2, n, nb)."""
        B = poly_basis(p, self.m)
        out_g, out_dg = [], []
        for i, phi in ((1, theta.phi1), (2, theta.phi2)):
            dg = (self.f0 / self.deltas[i - 1]) * B * np.exp(phi.ravel())[None, :]
            out_g.append(dg.sum(axis=1))
            out_dg.append(dg)
        return np.array(out_g), np.array(out_dg)

    def kappa(self, theta: ThetaParams, with_grad: bool = True) -> KappaState:
        gamma = theta.gamma
        ws = parametric_w(gamma, self.n_grid)
        c = np.exp(gamma)
        d = c[1] - c[2]
        p, dp, w = ws.p, ws.dp, ws.w
        Cp = self.deltas[1] + (self.deltas[0] - self.deltas[1]) * p
        Dp = self.fp0 + c[2] + d * p
        g, dg = self.g_and_grad(theta, p)
        kap = np.zeros(2)
        F = np.zeros((2, 3))
        dkap = np.zeros((2, self.n_theta))
        dF = np.zeros((2, 3, self.n_theta))
        dd = np.array([0.0, c[1], -c[2], 0.0, 0.0])
        c2vec = np.array([0.0, 0.0, c[2], 0.0, 0.0])
        for i in range(2):
            gw = g[i] * w
            F2 = 0.5 * c[0] * gw.sum() * dp
            F0 = -(Cp * gw).sum() * dp
            Iphig = (ws.phi * g[i]).sum() * dp
            F1 = d * Iphig - (Dp * gw).sum() * dp
            F[i] = (F2, F1, F0)
            k = kappa_from_quadratic(F2, F1, F0)
            kap[i] = k
            if not with_grad:
                continue
            sl = self.block(i + 1)
            dgw = dg[i] * w[:, None]
            dF[i, 0, sl] = 0.5 * c[0] * dgw.sum(axis=0) * dp
            dF[i, 2, sl] = -(Cp[:, None] * dgw).sum(axis=0) * dp
            dF[i, 1, sl] = (d * (ws.phi[:, None] * dg[i]).sum(axis=0)
                            - (Dp[:, None] * dgw).sum(axis=0)) * dp
            gwxi = ws.xi @ gw * dp
            dF[i, 0, :N_GAMMA] = 0.5 * c[0] * gwxi
            dF[i, 0, 0] += F2
            dF[i, 2, :N_GAMMA] = -(ws.xi @ (Cp * gw)) * dp
            dF[i, 1, :N_GAMMA] = (dd * Iphig + d * (ws.dphi @ g[i]) * dp
                                  - (c2vec * gw.sum() + dd * (p * gw).sum()) * dp
                                  - (ws.xi @ (Dp * gw)) * dp)
            den = 2.0 * F2 * k + F1
            dkap[i] = -(k * k * dF[i, 0] + k * dF[i, 1] + dF[i, 2]) / den
        return KappaState(kappa=kap, dkappa=dkap, F=F, dF=dF)

    def value(self, theta: ThetaParams, ks: KappaState, x, p):
        """v and v_x at paired arrays x, p."""
        g, _ = self.g_and_grad(theta, p)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = np.exp(-ks.kappa[:, None] * x[None, :])
        v = (g * (1.0 - e)).sum(axis=0)
        vx = (ks.kappa[:, None] * g * e).sum(axis=0)
        return v, vx

    def value_and_grad(self, theta: ThetaParams, ks: KappaState, x, p):
        """v, v_x and their theta-gradients, each gradient of shape (n, n_theta)."""
        g, dg = self.g_and_grad(theta, p)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.size
        kap = ks.kappa
        e = np.exp(-kap[:, None] * x[None, :])
        v = (g * (1.0 - e)).sum(axis=0)
        vx = (kap[:, None] * g * e).sum(axis=0)
        dv = np.zeros((n, self.n_theta))
        dvx = np.zeros((n, self.n_theta))
        for i in range(2):
            sl = self.block(i + 1)
            dv[:, sl] += dg[i] * (1.0 - e[i])[:, None]
            dvx[:, sl] += dg[i] * (kap[i] * e[i])[:, None]
            dv += np.outer(g[i] * x * e[i], ks.dkappa[i])
            dvx += np.outer(g[i] * e[i] * (1.0 - kap[i] * x), ks.dkappa[i])
        return v, vx, dv, dvx

    def boundary_sums(self, theta: ThetaParams):
        """(g1+g2)(0), (g1+g2)(1) and their gradients in theta."""
        g, dg = self.g_and_grad(theta, np.array([0.0, 1.0]))
        vals = g.sum(axis=0)
        grads = np.zeros((2, self.n_theta))
        for i in range(2):
            grads[:, self.block(i + 1)] = dg[i]
        return vals, grads
