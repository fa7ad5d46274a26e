"""Finite-difference benchmark for the two-exponential value surface."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .core import (EnvParams, NoPositiveRoot, boundary_targets, coefficients,
                   f_lambda, f_lambda_prime, kappa_from_quadratic, value_surface)

log = logging.getLogger(__name__)

PE_STAR = 2.0


class SplitCalibrationError(RuntimeError):
    """Outer split iteration hit its cap; carries the last state."""

    def __init__(self, message, solution):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class PGrid:
    M: int

    def __post_init__(self):
        if self.M < 4:
            raise ValueError("grid needs M >= 4")

    @property
    def step(self) -> float:
        return 1.0 / self.M

    @property
    def p(self) -> np.ndarray:
        return np.arange(self.M + 1) / self.M


def trapezoid(y, dx: float) -> float:
    return float(np.trapezoid(y, dx=dx))


def adjoint_weight(env: EnvParams, grid: PGrid):
    """Normalised weight w and Phi = (p(1-p)w)' on the grid (zero at both ends)."""
    p = grid.p[1:-1]
    q = 1.0 - p
    b0 = (env.mu1 - env.mu2) ** 2 / env.sigma ** 2
    b1 = 2.0 * (env.q21 - env.q12) / b0
    L = (b1 - 2.0) * np.log(p) - (b1 + 2.0) * np.log(q) - 2.0 / b0 * (env.q21 / p + env.q12 / q)
    w_in = np.exp(L - L.max())
    dlnw = (b1 - 2.0) / p + (b1 + 2.0) / q + 2.0 / b0 * (env.q21 / p ** 2 - env.q12 / q ** 2)
    w = np.zeros(grid.M + 1)
    w[1:-1] = w_in
    w /= trapezoid(w, grid.step)
    Phi = np.zeros_like(w)
    Phi[1:-1] = w[1:-1] * ((1.0 - 2.0 * p) + p * q * dlnw)
    return w, Phi


def _bands(env: EnvParams, grid: PGrid, stencil: str):
    """Tridiagonal bands (lower, diag, upper) of the interior FD operator."""
    co = coefficients(env)
    p = grid.p
    h = grid.step
    A, B, C = co.A(p), co.B(p), co.C(p)
    with np.errstate(divide="ignore"):
        pe = np.where(A > 0, 2.0 * np.abs(B) * h / np.where(A > 0, A, 1.0), np.inf)
    cen = pe <= PE_STAR
    pos = B >= 0
    lo = A / (2 * h * h)
    up = A / (2 * h * h)
    di = -A / (h * h) - C
    lo = lo - np.where(cen, B / (2 * h), 0.0)
    up = up + np.where(cen, B / (2 * h), 0.0)
    if stencil == "upwind":
        # forward difference for B >= 0, backward for B < 0: keeps an M-matrix
        up = up + np.where(~cen & pos, B / h, 0.0)
        di = di - np.where(~cen & pos, B / h, 0.0)
        lo = lo - np.where(~cen & ~pos, B / h, 0.0)
        di = di + np.where(~cen & ~pos, B / h, 0.0)
    elif stencil == "downwind":
        lo = lo - np.where(~cen & pos, B / h, 0.0)
        di = di + np.where(~cen & pos, B / h, 0.0)
        up = up + np.where(~cen & ~pos, B / h, 0.0)
        di = di - np.where(~cen & ~pos, B / h, 0.0)
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    return lo, di, up, cen


def _solve(lo, di, up, rhs):
    n = di.size
    ab = np.zeros((3, n))
    ab[0, 1:] = up[:-1]
    ab[1] = di
    ab[2, :-1] = lo[1:]
    return solve_banded((1, 1), ab, rhs)


class _SplitBasis:
    """g_i is linear in the endpoint splits: g_i = s0 * G_left + s1 * G_right."""

    def __init__(self, env, lam, cap_a, grid, stencil):
        self.env, self.grid = env, grid
        self.f0 = f_lambda(0.0, lam, cap_a)
        self.fp0 = f_lambda_prime(0.0, lam, cap_a)
        self.g0, self.g1 = boundary_targets(env, lam, cap_a)
        lo, di, up, self.centered = _bands(env, grid, stencil)
        lo, di, up = lo.copy(), di.copy(), up.copy()
        lo[0] = up[0] = 0.0
        di[0] = 1.0
        lo[-1] = up[-1] = 0.0
        di[-1] = 1.0
        self.bands = (lo, di, up)
        p = grid.p
        rl = -(1.0 - p) * self.f0
        rl[0], rl[-1] = self.g0, 0.0
        rr = -p * self.f0
        rr[0], rr[-1] = 0.0, self.g1
        self.G = np.stack([_solve(lo, di, up, rl), _solve(lo, di, up, rr)])
        self.w, self.Phi = adjoint_weight(env, grid)
        co = coefficients(env)
        h = grid.step
        D = co.D(p)
        self.F_basis = np.zeros((2, 3))   # rows: left/right basis; cols F2, F1, F0
        for b in range(2):
            Gb = self.G[b]
            self.F_basis[b, 0] = 0.5 * env.sigma ** 2 * trapezoid(Gb * self.w, h)
            self.F_basis[b, 1] = ((env.mu1 - env.mu2) * trapezoid(self.Phi * Gb, h)
                                  - trapezoid((self.fp0 + D) * Gb * self.w, h))
        self.F_basis[0, 2] = -self.f0 * trapezoid((1.0 - p) * self.w, h)
        self.F_basis[1, 2] = -self.f0 * trapezoid(p * self.w, h)

    def g(self, s0, s1):
        return s0 * self.G[0] + s1 * self.G[1]

    def F(self, s0, s1):
        return s0 * self.F_basis[0] + s1 * self.F_basis[1]

    def kappa(self, s0, s1):
        # F is homogeneous of degree one in (s0, s1), so kappa only sees the direction
        nrm = max(abs(s0), abs(s1))
        if nrm == 0.0:
            raise NoPositiveRoot(0.0, 0.0, 0.0)
        F2, F1, F0 = self.F(s0 / nrm, s1 / nrm)
        return kappa_from_quadratic(F2, F1, F0)


def solve_g_ode(env: EnvParams, lam: float, cap_a: float, splits, grid: PGrid,
                stencil: str = "upwind"):
    """g_1, g_2 on the grid for endpoint splits ((w1_0, w2_0), (w1_1, w2_1))."""
    sb = _SplitBasis(env, lam, cap_a, grid, stencil)
    (a0, b0), (a1, b1) = splits
    return sb.g(a0, a1), sb.g(b0, b1)


def project_kappa(g_i, w, Phi, env: EnvParams, lam: float, cap_a: float,
                  split_i, grid: PGrid) -> float:
    """Galerkin projection of the x-exponential equation onto w, then the root."""
    p = grid.p
    h = grid.step
    co = coefficients(env)
    f0 = f_lambda(0.0, lam, cap_a)
    fp0 = f_lambda_prime(0.0, lam, cap_a)
    varpi = (1.0 - p) * split_i[0] + p * split_i[1]
    F2 = 0.5 * env.sigma ** 2 * trapezoid(g_i * w, h)
    F0 = -f0 * trapezoid(varpi * w, h)
    F1 = (env.mu1 - env.mu2) * trapezoid(Phi * g_i, h) - trapezoid((fp0 + co.D(p)) * g_i * w, h)
    return kappa_from_quadratic(F2, F1, F0)


@dataclass
class FdSolution:
    p: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    kappa1: float
    kappa2: float
    splits0: tuple          # (w1, w2) at p = 0
    splits1: tuple          # (w1, w2) at p = 1
    weight: np.ndarray
    residuals: tuple
    iterations: int = 0
    converged: bool = False
    meta: dict = field(default_factory=dict)

    def g_at(self, p):
        return np.interp(p, self.p, self.g1), np.interp(p, self.p, self.g2)

    def to_dict(self) -> dict:
        return {
            "kappa1": self.kappa1, "kappa2": self.kappa2,
            "splits0": list(self.splits0), "splits1": list(self.splits1),
            "residuals": list(self.residuals), "iterations": self.iterations,
            "converged": self.converged, "meta": self.meta,
            "p": self.p.tolist(), "g1": self.g1.tolist(), "g2": self.g2.tolist(),
            "weight": self.weight.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "FdSolution":
        return cls(p=np.array(d["p"]), g1=np.array(d["g1"]), g2=np.array(d["g2"]),
                   kappa1=d["kappa1"], kappa2=d["kappa2"],
                   splits0=tuple(d["splits0"]), splits1=tuple(d["splits1"]),
                   weight=np.array(d["weight"]), residuals=tuple(d["residuals"]),
                   iterations=d["iterations"], converged=d["converged"], meta=d["meta"])


def split_update(s: float, k1: float, k2: float, degenerate_tol: float = 1e-10) -> float:
    """Least-squares split for one endpoint, projected to [0, 1]."""
    if abs(k1 - k2) <= degenerate_tol * max(1.0, abs(k1), abs(k2)):
        return 0.5
    return float(np.clip((s - k2) / (k1 - k2), 0.0, 1.0))


def calibrate_splits(env: EnvParams, lam: float, cap_a: float, targets=(1.2, 1.6),
                     grid: PGrid | None = None, relax: float = 0.01,
                     tol_residual: float = 1e-12, tol_split: float = 1e-12,
                     max_iter: int = 100_000, init=(0.5, 0.5),
                     stencil: str = "upwind", strict: bool = True) -> FdSolution:
    """Outer fixed point on the endpoint splits.

    ``targets`` are the complete-information slopes (nu_x(0,1), nu_x(0,2)); the
    p = 0 endpoint (regime 2) is matched to the second entry. ``init`` holds the
    starting w1 at p = 0 and p = 1. With ``strict`` a non-converged run raises
    SplitCalibrationError carrying the last solution.
    """
    grid = grid or PGrid(10_000)
    if min(targets) <= 0:
        raise ValueError("targets must be positive")
    sb = _SplitBasis(env, lam, cap_a, grid, stencil)
    if not (sb.g0 > 0 and sb.g1 > 0):
        raise ValueError("boundary targets g(0), g(1) must be positive")
    s = np.array([targets[1] / sb.g0, targets[0] / sb.g1])
    om = np.array(init, dtype=float)      # w1 at p=0 and p=1
    last_dir = [(om[0], om[1]), (1 - om[0], 1 - om[1])]
    converged = False
    r = np.full(2, np.nan)
    it = 0
    k1 = k2 = np.nan
    for it in range(1, max_iter + 1):
        dirs = [(om[0], om[1]), (1.0 - om[0], 1.0 - om[1])]
        ks = []
        for i in range(2):
            if max(abs(dirs[i][0]), abs(dirs[i][1])) > 0.0:
                last_dir[i] = dirs[i]
            ks.append(sb.kappa(*last_dir[i]))
        k1, k2 = ks
        r = s - (om * k1 + (1.0 - om) * k2)
        star = np.array([split_update(s[j], k1, k2) for j in range(2)])
        new = (1.0 - relax) * om + relax * star
        change = np.max(np.abs(new - om))
        om = new
        if np.max(np.abs(r)) <= tol_residual and change <= tol_split:
            converged = True
            break
    sol = FdSolution(
        p=grid.p, g1=sb.g(om[0], om[1]), g2=sb.g(1 - om[0], 1 - om[1]),
        kappa1=float(k1), kappa2=float(k2),
        splits0=(float(om[0]), float(1 - om[0])), splits1=(float(om[1]), float(1 - om[1])),
        weight=sb.w, residuals=(float(r[0]), float(r[1])), iterations=it,
        converged=converged,
        meta={"g0": sb.g0, "g1": sb.g1, "targets": list(targets), "M": grid.M,
              "stencil": stencil, "cap_a": cap_a, "lam": lam, "sigma": env.sigma})
    if not converged:
        msg = (f"split iteration did not converge in {max_iter} steps; "
               f"residuals={sol.residuals}, kappa=({k1:.6g}, {k2:.6g})")
        log.warning(msg)
        if strict:
            raise SplitCalibrationError(msg, sol)
    return sol


def fd_at_splits(env: EnvParams, lam: float, cap_a: float, splits0, splits1,
                 grid: PGrid | None = None, stencil: str = "upwind") -> FdSolution:
    """Single solve at fixed splits (no outer iteration)."""
    grid = grid or PGrid(10_000)
    sb = _SplitBasis(env, lam, cap_a, grid, stencil)
    k1 = sb.kappa(splits0[0], splits1[0])
    k2 = sb.kappa(splits0[1], splits1[1])
    return FdSolution(p=grid.p, g1=sb.g(splits0[0], splits1[0]), g2=sb.g(splits0[1], splits1[1]),
                      kappa1=k1, kappa2=k2, splits0=tuple(splits0), splits1=tuple(splits1),
                      weight=sb.w, residuals=(np.nan, np.nan), converged=False,
                      meta={"g0": sb.g0, "g1": sb.g1, "M": grid.M, "stencil": stencil})


def benchmark_value(fd: FdSolution, x, p):
    g1, g2 = fd.g_at(p)
    return value_surface(g1, g2, fd.kappa1, fd.kappa2, x)


def g_bounds_ok(fd: FdSolution, env: EnvParams, lam: float, cap_a: float, slack: float = 1e-12) -> bool:
    """Comparison bounds: g_i between 0 and f(0)/min(delta), sign-flipped if f(0) < 0."""
    f0 = f_lambda(0.0, lam, cap_a)
    bound = f0 / min(env.delta1, env.delta2)
    lo, hi = min(0.0, bound), max(0.0, bound)
    tol = slack * max(1.0, abs(bound))
    return all(np.all(g >= lo - tol) and np.all(g <= hi + tol) for g in (fd.g1, fd.g2))


def ols_poly_fit(p, g, order: int = 2):
    """Least-squares polynomial fit and its MAE normalised by mean |g|."""
    coef = np.polynomial.polynomial.polyfit(p, g, order)
    fit = np.polynomial.polynomial.polyval(p, coef)
    denom = np.mean(np.abs(g))
    nmae = float(np.mean(np.abs(fit - g)) / denom) if denom > 0 else 0.0
    return coef, nmae


def hjb_residual(fd: FdSolution, env: EnvParams, lam: float, cap_a: float, x):
    """Pointwise residual of the full exploratory HJB at the assembled surface.

    x-derivatives are analytic, p-derivatives are centred differences on the
    FD grid. Returns an array of shape (len(x), M-1) over interior p nodes.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))[:, None]
    p = fd.p
    h = p[1] - p[0]
    co = coefficients(env)
    pi = p[1:-1][None, :]
    terms = []
    for g, k in ((fd.g1, fd.kappa1), (fd.g2, fd.kappa2)):
        gp = (g[2:] - g[:-2]) / (2 * h)
        gpp = (g[2:] - 2 * g[1:-1] + g[:-2]) / (h * h)
        e = np.exp(-k * x)
        terms.append((g[1:-1] * (1 - e), k * g[1:-1] * e, -k * k * g[1:-1] * e,
                      gp * (1 - e), gpp * (1 - e), k * gp * e))
    v, vx, vxx, vp, vpp, vxp = (sum(t[j] for t in terms) for j in range(6))
    return (0.5 * env.sigma ** 2 * vxx + 0.5 * co.A(pi) * vpp
            + (env.mu1 - env.mu2) * pi * (1 - pi) * vxp + co.B(pi) * vp
            + co.D(pi) * vx - co.C(pi) * v + f_lambda(vx, lam, cap_a))
