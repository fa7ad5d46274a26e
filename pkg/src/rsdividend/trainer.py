"""Actor-critic training loop: on-policy episodes with filtering, then one
policy-evaluation update per iteration (martingale loss or online CTD).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import nnls

from .core import (ConfigError, ControlConfig, EnvParams, NoPositiveRoot,
                   boundary_targets, f_lambda, entropy_reward, entropy_reward_sensitivity)
from .episodes import Episode, rollout, theta_policy
from .estimation import EstimationDegenerate, heuristic_estimate
from .market import simulate_uncontrolled_paths
from .parametric import N_GAMMA, ParametricModel, ThetaParams, poly_basis

log = logging.getLogger(__name__)

HISTORY_STREAM_BASE = 8
MAX_HISTORY_TRIES = 1000
LOG_COLUMNS = ["iteration", "value", "loss", "loss_ma", "eg0", "eg1", "eg2", "eg3", "eg4",
               "grad_norm", "aborted", "rejected"]


class EpisodeAborted(RuntimeError):
    """kappa could not be formed at the current theta."""


class TrainingFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "ctd"                     # "ml" or "ctd"
    rho: float = 0.0
    eta_phi1: float = 3e-4
    eta_phi2: float = 3e-4
    eta_gamma: tuple = (3e-2, 5e-3, 5e-3, 5e-3, 5e-3)
    lr_decay_exponent: float = 0.1
    reg_env_weights: tuple = (7.0, 0.5, 0.5, 0.2, 0.2)
    reg_bc_weights: tuple = (60.0, 60.0)
    batch_size: int = 1
    n_iterations: int = 10_000
    filter_source: str = "true"           # "true" or "est"
    reg_source: str = "true"              # "true" or "est"
    estimation: str = "once"              # "once" or "per-iteration"
    history_years: float = 20.0
    grad_clip: float = 1e3
    n_grid: int = 2000
    m: int = 2
    loss_window: int = 5
    abort_window: int = 50
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.mode not in ("ml", "ctd"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.filter_source not in ("true", "est") or self.reg_source not in ("true", "est"):
            raise ConfigError("filter_source and reg_source must be 'true' or 'est'")
        if self.estimation not in ("once", "per-iteration"):
            raise ConfigError(f"unknown estimation mode {self.estimation!r}")
        rates = (self.eta_phi1, self.eta_phi2, *self.eta_gamma, *self.reg_env_weights,
                 *self.reg_bc_weights, self.lr_decay_exponent)
        if len(self.eta_gamma) != N_GAMMA or len(self.reg_env_weights) != N_GAMMA \
                or len(self.reg_bc_weights) != 2:
            raise ConfigError("eta_gamma and reg_env_weights need 5 entries, reg_bc_weights 2")
        if min(rates) < 0:
            raise ConfigError("learning rates and weights must be nonnegative")
        if self.batch_size < 1 or self.n_iterations < 0:
            raise ConfigError("batch_size >= 1 and n_iterations >= 0 required")

    def learning_rates(self, m: int) -> np.ndarray:
        nb = (m + 1) ** 2
        return np.concatenate([self.eta_gamma, np.full(nb, self.eta_phi1), np.full(nb, self.eta_phi2)])


def generate_episode(model: ParametricModel, theta: ThetaParams, env_true: EnvParams,
                     env_filter: EnvParams, control: ControlConfig, seed: int,
                     index: int = 0) -> Episode:
    """One on-policy episode; the market runs on env_true, the filter on env_filter."""
    try:
        ks = model.kappa(theta, with_grad=False)
    except NoPositiveRoot as exc:
        raise EpisodeAborted(str(exc)) from exc
    return rollout(theta_policy(model, theta, ks), env_true, env_filter, control, seed,
                   [index]).episode(0)


def fd_surrogate_theta(fd, env: EnvParams, lam: float, cap_a: float, m: int = 2,
                       floor: float = 1e-12) -> ThetaParams:
    """theta with e^gamma at the environment and phi fitted to FD g_i by NNLS.

    Coefficients that NNLS sets to zero are floored so that phi stays finite.
    """
    f0 = f_lambda(0.0, lam, cap_a)
    B = poly_basis(fd.p, m)
    phis = []
    for g, delta in ((fd.g1, env.delta1), (fd.g2, env.delta2)):
        c, _ = nnls(B, np.asarray(g) * delta / f0)
        phis.append(np.log(np.maximum(c, floor)).reshape(m + 1, m + 1))
    return ThetaParams(np.log(env.env_vector()), phis[0], phis[1])


# ---------------------------------------------------------------- losses


def ml_residuals(model: ParametricModel, theta: ThetaParams, ks, ep: Episode):
    """Martingale residuals m_k, k = 0..K-1, and their theta-gradients (K, n_theta)."""
    K = ep.K
    v, vx, dv, dvx = model.value_and_grad(theta, ks, ep.x[:K], ep.p[:K])
    disc = np.exp(-ep.Lambda[:K])
    H = entropy_reward(vx, model.lam, model.cap_a)
    Y = entropy_reward_sensitivity(vx, model.lam, model.cap_a)
    tail = np.cumsum((disc * H * ep.dt)[::-1])[::-1]
    dtail = np.cumsum(((disc * Y * ep.dt)[:, None] * dvx)[::-1], axis=0)[::-1]
    m = disc * v - tail
    dm = disc[:, None] * dv - dtail
    return m, dm


def ml_data_grad(model, theta, ks, ep: Episode):
    m, dm = ml_residuals(model, theta, ks, ep)
    return 0.5 * float(np.sum(m * m) * ep.dt), (m * ep.dt) @ dm


def td_errors(model: ParametricModel, theta: ThetaParams, ks, ep: Episode, env_filter: EnvParams):
    """Delta_k for k = 0..K-1 with v at the absorbing state equal to zero."""
    K = ep.K
    v, vx, dv, _ = model.value_and_grad(theta, ks, ep.x, ep.p)
    dhat = (env_filter.delta1 - env_filter.delta2) * ep.p[:K] + env_filter.delta2
    H = entropy_reward(vx[:K], model.lam, model.cap_a)
    delta = v[1:] - v[:K] - dhat * v[:K] * ep.dt + H * ep.dt
    return delta, dv[:K]


def ctd_direction(model, theta, ks, ep: Episode, env_filter: EnvParams, rho: float):
    """(data loss, G_TD) with eligibility traces decayed by rho^dt per step."""
    delta, dv = td_errors(model, theta, ks, ep, env_filter)
    disc = np.exp(-ep.Lambda[:ep.K])
    trace = dv * ep.dt
    decay = rho ** ep.dt if rho > 0 else 0.0
    if decay > 0:
        for k in range(1, ep.K):
            trace[k] += decay * trace[k - 1]
    G = (disc * delta) @ trace
    return 0.5 * float(np.sum(disc * delta * delta)), G


def regularizer(model: ParametricModel, theta: ThetaParams, env_ref: EnvParams,
                cfg: TrainerConfig):
    """Penalty 0.5 sum w_env (e^gamma - env)^2 + 0.5 sum w_bc e_i^2 and its gradient."""
    eg = np.exp(theta.gamma)
    w_env = np.asarray(cfg.reg_env_weights, dtype=float)
    w_bc = np.asarray(cfg.reg_bc_weights, dtype=float)
    gap = eg - env_ref.env_vector()
    targets = np.array(boundary_targets(env_ref, model.lam, model.cap_a))
    sums, dsums = model.boundary_sums(theta)
    e = sums - targets
    grad = np.zeros(model.n_theta)
    grad[:N_GAMMA] = w_env * gap * eg
    grad += (w_bc * e) @ dsums
    return 0.5 * float(np.sum(w_env * gap ** 2) + np.sum(w_bc * e ** 2)), grad


def _step(theta: ThetaParams, grad: np.ndarray, lr: np.ndarray, clip: float):
    norm = float(np.linalg.norm(grad))
    if not np.isfinite(norm):
        return theta, norm, True
    if clip > 0 and norm > clip:
        grad = grad * (clip / norm)
    return ThetaParams.from_flat(theta.flat() - lr * grad, theta.m), norm, False


def ml_update(model, theta, episodes, env_ref, cfg: TrainerConfig, n: int, ks=None):
    """One descent step on the regularised martingale loss; returns (theta', info)."""
    if not episodes:
        raise ValueError("empty batch")
    ks = ks if ks is not None else model.kappa(theta)
    parts = [ml_data_grad(model, theta, ks, ep) for ep in episodes]
    data = float(np.mean([p[0] for p in parts]))
    g = np.mean([p[1] for p in parts], axis=0)
    reg, g_reg = regularizer(model, theta, env_ref, cfg)
    lr = cfg.learning_rates(theta.m) / (1.0 + n) ** cfg.lr_decay_exponent
    new, norm, rejected = _step(theta, g + g_reg, lr, cfg.grad_clip)
    return new, {"loss": data + reg, "grad_norm": norm, "rejected": rejected}


def ctd_update(model, theta, episodes, env_filter, env_ref, cfg: TrainerConfig, n: int, ks=None):
    """One ascent step along G_TD minus the regulariser gradient."""
    if isinstance(episodes, Episode):
        episodes = [episodes]
    if not episodes:
        raise ValueError("empty batch")
    ks = ks if ks is not None else model.kappa(theta)
    parts = [ctd_direction(model, theta, ks, ep, env_filter, cfg.rho) for ep in episodes]
    data = float(np.mean([p[0] for p in parts]))
    G = np.mean([p[1] for p in parts], axis=0)
    reg, g_reg = regularizer(model, theta, env_ref, cfg)
    lr = cfg.learning_rates(theta.m) / (1.0 + n) ** cfg.lr_decay_exponent
    new, norm, rejected = _step(theta, g_reg - G, lr, cfg.grad_clip)
    return new, {"loss": data + reg, "grad_norm": norm, "rejected": rejected}


# ---------------------------------------------------------------- environment


def estimate_environment(env_true: EnvParams, control: ControlConfig, seed: int,
                         index: int, years: float = 20.0):
    """Heuristic estimates from a simulated history.

    Histories whose estimates are degenerate are skipped; the next index is tried.
    Returns (EnvParams, history index used).
    """
    for j in range(MAX_HISTORY_TRIES):
        idx = index * MAX_HISTORY_TRIES + j
        path = simulate_uncontrolled_paths(env_true, control, years, 1, seed, first_index=idx,
                                           stream_base=HISTORY_STREAM_BASE)[0]
        try:
            rep = heuristic_estimate(path.surplus, control.dt,
                                     deltas=(env_true.delta1, env_true.delta2))
            return rep.estimates, idx
        except (EstimationDegenerate, ConfigError):
            continue
    raise TrainingFailure(f"no usable estimation history after {MAX_HISTORY_TRIES} tries")


# ---------------------------------------------------------------- loop


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LOG_COLUMNS)
            for r in self.rows:
                wr.writerow([r["iteration"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:-2]]
                            + [int(r["aborted"]), int(r["rejected"])])


@dataclass
class TrainResult:
    theta: ThetaParams
    log: TrainLog
    env_filter: EnvParams
    env_ref: EnvParams
    env_est: EnvParams | None
    iteration: int

    def checkpoint(self) -> dict:
        return {"iteration": self.iteration, "theta": self.theta.to_dict(),
                "env_est": asdict(self.env_est) if self.env_est is not None else None,
                "log": self.log.rows}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.checkpoint(), fh, sort_keys=True)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    d["theta"] = ThetaParams.from_dict(d["theta"])
    d["env_est"] = EnvParams(**d["env_est"]) if d.get("env_est") else None
    return d


def train(cfg: TrainerConfig, control: ControlConfig, env_true: EnvParams, seed: int,
          theta0: ThetaParams | None = None, resume: dict | None = None,
          checkpoint_path=None) -> TrainResult:
    """Run iterations up to cfg.n_iterations, continuing from ``resume`` if given."""
    model = ParametricModel((env_true.delta1, env_true.delta2), control.lam, control.cap_a,
                            cfg.n_grid, cfg.m)
    if resume is not None:
        theta, start, est = resume["theta"], int(resume["iteration"]), resume["env_est"]
        tlog = TrainLog([dict(r) for r in resume["log"]])
    else:
        theta = theta0 if theta0 is not None else ThetaParams.initial(cfg.m)
        start, est, tlog = 0, None, TrainLog()
    uses_est = "est" in (cfg.filter_source, cfg.reg_source)
    if uses_est and est is None and cfg.estimation == "once":
        est = estimate_environment(env_true, control, seed, 0, cfg.history_years)[0]

    def assign(est_env):
        if not uses_est:
            return env_true, env_true
        return (est_env if cfg.filter_source == "est" else env_true,
                est_env if cfg.reg_source == "est" else env_true)

    env_filter, env_ref = assign(est)
    losses = [r["loss"] for r in tlog.rows]
    aborted_hist = [bool(r["aborted"]) for r in tlog.rows]
    for n in range(start, cfg.n_iterations):
        if uses_est and cfg.estimation == "per-iteration":
            est = estimate_environment(env_true, control, seed, n, cfg.history_years)[0]
            env_filter, env_ref = assign(est)
        aborted = False
        value = math.nan
        try:
            ks = model.kappa(theta)
            if not np.all(np.isfinite(ks.dkappa)):
                raise NoPositiveRoot(*ks.F[0])
        except NoPositiveRoot as exc:
            aborted = True
            log.info("iteration %d: episode aborted (%s)", n, exc)
        if aborted:
            # regulariser-only step so that theta can leave the infeasible region
            reg, g_reg = regularizer(model, theta, env_ref, cfg)
            lr = cfg.learning_rates(theta.m) / (1.0 + n) ** cfg.lr_decay_exponent
            theta, norm, rejected = _step(theta, g_reg, lr, cfg.grad_clip)
            info = {"loss": reg, "grad_norm": norm, "rejected": rejected}
        else:
            pol = theta_policy(model, theta, ks)
            ro = rollout(pol, env_true, env_filter, control, seed,
                         range(n * cfg.batch_size, (n + 1) * cfg.batch_size))
            eps = [ro.episode(b) for b in range(cfg.batch_size)]
            eps = [e for e in eps if e.K > 0] or eps
            value = float(model.value(theta, ks, [control.x0], [control.p0])[0][0])
            if cfg.mode == "ml":
                theta, info = ml_update(model, theta, eps, env_ref, cfg, n, ks)
            else:
                theta, info = ctd_update(model, theta, eps, env_filter, env_ref, cfg, n, ks)
            if info["rejected"]:
                log.warning("iteration %d: non-finite gradient, update rejected", n)
        losses.append(info["loss"])
        aborted_hist.append(aborted)
        eg = np.exp(theta.gamma)
        tlog.rows.append({"iteration": n, "value": value, "loss": info["loss"],
                          "loss_ma": float(np.mean(losses[-cfg.loss_window:])),
                          **{f"eg{j}": float(eg[j]) for j in range(N_GAMMA)},
                          "grad_norm": info["grad_norm"], "aborted": aborted,
                          "rejected": info["rejected"]})
        window = aborted_hist[-cfg.abort_window:]
        if len(window) == cfg.abort_window and sum(window) > 0.5 * cfg.abort_window:
            raise TrainingFailure(f"more than half of the last {cfg.abort_window} episodes aborted")
        if checkpoint_path and cfg.checkpoint_every and (n + 1) % cfg.checkpoint_every == 0:
            TrainResult(theta, tlog, env_filter, env_ref, est, n + 1).save(checkpoint_path)
    res = TrainResult(theta, tlog, env_filter, env_ref, est, max(start, cfg.n_iterations))
    if checkpoint_path:
        res.save(checkpoint_path)
    return res
