"""Environment estimation from an observed surplus path.

Two estimators: a window-threshold regime classifier followed by plug-in
moments, and Baum-Welch EM for a two-state Gaussian HMM on the increments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import EnvParams

MAD_SCALE = 1.4826
PARAMS = ("mu1", "mu2", "sigma", "q12", "q21")


class EstimationDegenerate(ArithmeticError):
    """A regime received no labels, so its parameters are not identified."""

    def __init__(self, regime: int, what: str = "labels"):
        self.regime = regime
        super().__init__(f"regime {regime} received no {what}")


@dataclass
class EstimationReport:
    method: str
    values: dict                      # mu1, mu2, sigma, q12, q21 (may hold nan)
    labels: np.ndarray                # per increment, 0 = unlabeled
    deltas: tuple = (0.1, 0.3)
    diagnostics: dict = field(default_factory=dict)
    converged: bool = True

    @property
    def estimates(self) -> EnvParams:
        """Estimated environment; discount rates come from configuration."""
        return EnvParams(**self.values, delta1=self.deltas[0], delta2=self.deltas[1])

    @property
    def complete(self) -> bool:
        return all(math.isfinite(self.values[k]) for k in PARAMS)

    def to_dict(self) -> dict:
        return {"method": self.method, "values": dict(self.values),
                "deltas": list(self.deltas), "converged": self.converged,
                "diagnostics": self.diagnostics}


def _fill_labels(raw: np.ndarray) -> np.ndarray:
    """Forward-fill unlabeled entries, then back-fill the head."""
    idx = np.where(raw > 0, np.arange(len(raw)), -1)
    np.maximum.accumulate(idx, out=idx)
    filled = np.where(idx >= 0, raw[np.maximum(idx, 0)], 0)
    first = np.flatnonzero(raw > 0)
    if len(first):
        filled[:first[0]] = raw[first[0]]
    return filled


def _runs(labels: np.ndarray):
    """(label, start, length) of maximal runs of equal values."""
    if len(labels) == 0:
        return []
    cut = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cut])
    ends = np.concatenate([cut, [len(labels)]])
    return [(int(labels[s]), int(s), int(e - s)) for s, e in zip(starts, ends)]


def heuristic_estimate(surplus, dt: float, M: int = 252, eta_u: float = 0.15,
                       deltas=(0.1, 0.3), strict: bool = True) -> EstimationReport:
    x = np.asarray(surplus, dtype=float)
    if len(x) <= M:
        raise ValueError(f"path length {len(x)} must exceed lookback {M}")
    dx = np.diff(x)
    K = len(dx)
    sigma0 = MAD_SCALE * np.median(np.abs(dx - np.median(dx))) / math.sqrt(dt)
    U = eta_u * sigma0 * math.sqrt(M * dt)

    k = np.arange(K)
    window = x[k] - x[np.maximum(0, k - M)]
    raw = np.zeros(K, dtype=np.int8)
    if U > 0:
        raw[window >= U] = 1
        raw[window <= -U] = 2
    filled = _fill_labels(raw)

    vals = dict.fromkeys(PARAMS, float("nan"))
    mu = {}
    for i in (1, 2):
        sel = raw == i
        if not sel.any():
            if strict:
                raise EstimationDegenerate(i)
            mu[i] = float("nan")
        else:
            mu[i] = float(dx[sel].sum() / (dt * sel.sum()))
    vals["mu1"], vals["mu2"] = mu[1], mu[2]

    drift = np.where(filled == 1, mu[1], mu[2])
    if (filled > 0).all():
        vals["sigma"] = float(math.sqrt(np.sum((dx - drift * dt) ** 2) / (K * dt)))

    holding = {1: [], 2: []}
    for lab, start, length in _runs(filled):
        if lab and start > 0 and start + length < K:
            holding[lab].append(length * dt)
    for i, name in ((1, "q12"), (2, "q21")):
        if holding[i]:
            vals[name] = 1.0 / float(np.mean(holding[i]))
        elif strict:
            raise EstimationDegenerate(i, "complete holding spells")

    diag = {"sigma0": sigma0, "threshold": U,
            "n_labeled_1": int((raw == 1).sum()), "n_labeled_2": int((raw == 2).sum()),
            "n_unlabeled": int((raw == 0).sum()), "unlabeled_policy": "forward-fill",
            "n_spells_1": len(holding[1]), "n_spells_2": len(holding[2]),
            "mean_hold_1": float(np.mean(holding[1])) if holding[1] else None,
            "mean_hold_2": float(np.mean(holding[2])) if holding[2] else None}
    return EstimationReport("heuristic", vals, filled, tuple(deltas), diag)


@numba.njit(cache=True)
def _forward_backward(b, P, pi):
    n = b.shape[0]
    alpha = np.empty((n, 2))
    beta = np.empty((n, 2))
    c = np.empty(n)
    a0 = pi[0] * b[0, 0]
    a1 = pi[1] * b[0, 1]
    c[0] = a0 + a1
    alpha[0, 0] = a0 / c[0]
    alpha[0, 1] = a1 / c[0]
    for t in range(1, n):
        a0 = (alpha[t - 1, 0] * P[0, 0] + alpha[t - 1, 1] * P[1, 0]) * b[t, 0]
        a1 = (alpha[t - 1, 0] * P[0, 1] + alpha[t - 1, 1] * P[1, 1]) * b[t, 1]
        c[t] = a0 + a1
        alpha[t, 0] = a0 / c[t]
        alpha[t, 1] = a1 / c[t]
    beta[n - 1, 0] = 1.0
    beta[n - 1, 1] = 1.0
    xi = np.zeros((2, 2))
    for t in range(n - 2, -1, -1):
        e0 = b[t + 1, 0] * beta[t + 1, 0]
        e1 = b[t + 1, 1] * beta[t + 1, 1]
        beta[t, 0] = (P[0, 0] * e0 + P[0, 1] * e1) / c[t + 1]
        beta[t, 1] = (P[1, 0] * e0 + P[1, 1] * e1) / c[t + 1]
        for i in range(2):
            xi[i, 0] += alpha[t, i] * P[i, 0] * e0 / c[t + 1]
            xi[i, 1] += alpha[t, i] * P[i, 1] * e1 / c[t + 1]
    gamma = alpha * beta
    return gamma, xi, c


def _emissions(dx, mu, sigma, dt):
    # densities rescaled by a common factor; the likelihood adds it back
    s2 = sigma * sigma * dt
    z = (dx[:, None] - mu[None, :] * dt) ** 2 / (2 * s2)
    shift = z.min(axis=1, keepdims=True)
    return np.exp(-(z - shift)), shift[:, 0], 0.5 * math.log(2 * math.pi * s2)


def em_estimate(surplus, dt: float, n_iters: int = 200, tol: float = 1e-8,
                deltas=(0.1, 0.3)) -> EstimationReport:
    x = np.asarray(surplus, dtype=float)
    if len(x) < 3:
        raise ValueError("need at least two increments")
    dx = np.diff(x)
    n = len(dx)
    med = np.median(dx)
    hi, lo = dx[dx >= med], dx[dx < med]
    mu = np.array([hi.mean(), lo.mean() if len(lo) else hi.mean()]) / dt
    sigma = float(np.std(dx) / math.sqrt(dt)) or 1.0
    P = np.array([[0.99, 0.01], [0.01, 0.99]])
    pi = np.array([0.5, 0.5])

    history = []
    converged = False
    for _ in range(n_iters):
        b, shift, lognorm = _emissions(dx, mu, sigma, dt)
        gamma, xi, c = _forward_backward(b, P, pi)
        ll = float(np.sum(np.log(c)) - shift.sum() - n * lognorm)
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) <= tol * (1.0 + abs(ll)):
            converged = True
            break
        occ = gamma.sum(axis=0)
        mu = (gamma * dx[:, None]).sum(axis=0) / (dt * np.maximum(occ, 1e-300))
        resid = (dx[:, None] - mu[None, :] * dt) ** 2
        sigma = float(math.sqrt((gamma * resid).sum() / (n * dt)))
        P = xi / np.maximum(xi.sum(axis=1, keepdims=True), 1e-300)
        pi = gamma[0] / gamma[0].sum()

    # regime 1 is the state with the larger drift
    hi_state = 0 if mu[0] >= mu[1] else 1
    lo_state = 1 - hi_state
    vals = {"mu1": float(mu[hi_state]), "mu2": float(mu[lo_state]), "sigma": sigma,
            "q12": float(P[hi_state, lo_state] / dt), "q21": float(P[lo_state, hi_state] / dt)}
    labels = np.where(np.argmax(gamma, axis=1) == hi_state, 1, 2).astype(np.int8)
    diff = np.diff(history)
    diag = {"loglik": history, "n_iter": len(history),
            "monotone": bool(np.all(diff >= -1e-9 * (1.0 + np.abs(np.asarray(history[1:])))))}
    return EstimationReport("em", vals, labels, tuple(deltas), diag, converged)


def summarize(reports) -> list[dict]:
    """Summary rows (method, param, mean, sd, n) with sd the sample sd."""
    rows = []
    by_method = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)
    for method, rs in by_method.items():
        for name in PARAMS:
            v = np.array([r.values[name] for r in rs], dtype=float)
            v = v[np.isfinite(v)]
            rows.append({"method": method, "param": name,
                         "mean": float(v.mean()) if len(v) else float("nan"),
                         "sd": float(v.std(ddof=1)) if len(v) > 1 else float("nan"),
                         "n": int(len(v))})
    return rows


def write_table_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["method", "param", "mean", "sd", "n"])
        wr.writeheader()
        for row in rows:
            wr.writerow({**row, "mean": repr(row["mean"]), "sd": repr(row["sd"])})
