"""Out-of-sample evaluation of a frozen policy over independent test paths."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ControlConfig, EnvParams, entropy_reward
from .episodes import fd_policy, rollout, theta_policy
from .fd import FdSolution, benchmark_value
from .parametric import ParametricModel, ThetaParams

ANNUALIZE = math.sqrt(252.0)
TABLE_COLUMNS = ["policy", "mean_V", "var_V", "snr", "sharpe_sr", "sharpe_ri", "n_paths",
                 "mean_V_running", "var_V_running", "mean_dividends", "ruin_fraction"]


class DegenerateEvaluation(RuntimeError):
    pass


@dataclass(frozen=True)
class FrozenPolicy:
    """Rollout table plus the value function used to close paths at the horizon."""
    table: object
    value: object       # callable (x, p) -> v
    label: str

    @classmethod
    def from_theta(cls, model: ParametricModel, theta: ThetaParams, label: str = "theta"):
        ks = model.kappa(theta, with_grad=False)
        return cls(theta_policy(model, theta, ks),
                   lambda x, p: model.value(theta, ks, x, p)[0], label)

    @classmethod
    def from_fd(cls, fd: FdSolution, label: str = "Optimal"):
        return cls(fd_policy(fd), lambda x, p: benchmark_value(fd, x, p)[0], label)


@dataclass
class EvalReport:
    mean_V: float
    var_V: float
    snr: float
    sharpe_sr: float
    sharpe_ri: float
    n_paths: int
    mean_V_running: float
    var_V_running: float
    mean_dividends: float
    ruin_fraction: float
    policy: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in TABLE_COLUMNS}


def write_table_csv(reports, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TABLE_COLUMNS)
        for rep in reports:
            wr.writerow([rep.policy] + [repr(v) if isinstance(v, float) else v
                                        for v in list(rep.row().values())[1:]])


def _moments(per_path_sum, per_path_sq, per_path_n):
    # fsum is exactly rounded, so the result does not depend on path order
    n = math.fsum(per_path_n)
    if n < 2:
        return math.nan, math.nan
    mean = math.fsum(per_path_sum) / n
    var = (math.fsum(per_path_sq) - n * mean * mean) / (n - 1)
    return mean, math.sqrt(max(var, 0.0))


def _sharpe(per_path_sum, per_path_sq, per_path_n):
    mean, sd = _moments(per_path_sum, per_path_sq, per_path_n)
    return mean / sd * ANNUALIZE if sd > 0 else math.nan


def evaluate(policy: FrozenPolicy, env_true: EnvParams, env_filter: EnvParams,
             control: ControlConfig, n_paths: int | None = None, seed: int = 0,
             indices=None, chunk: int = 1000) -> EvalReport:
    """Monte Carlo metrics over test paths ``indices`` (default range(n_paths)).

    mean_V closes every surviving path with the discounted value of the
    policy's own value function at the horizon; the running sum alone is
    reported as mean_V_running.
    """
    idx = np.asarray(list(indices) if indices is not None else range(n_paths))
    if len(idx) < 2:
        raise ValueError("need at least two paths")
    if not control.x0 > control.ruin_eps:
        raise DegenerateEvaluation("every path is ruined at step 0")
    dt = control.dt
    V, V_run, divs, ruined = [], [], [], []
    sr = ([], [], [])
    ri = ([], [], [])
    for start in range(0, len(idx), chunk):
        ro = rollout(policy.table, env_true, env_filter, control, seed, idx[start:start + chunk])
        rows = np.arange(len(ro))
        n = ro.u.shape[1]
        live = np.arange(n)[None, :] < ro.K[:, None]
        disc = np.exp(-ro.Lambda[:, :-1])
        H = entropy_reward(ro.vx, control.lam, control.cap_a)
        inc = np.where(live, disc * H * dt, 0.0)
        run = inc.sum(axis=1)
        xK, pK = ro.x[rows, ro.K], ro.p[rows, ro.K]
        tail = np.where(ro.ruined, 0.0, np.exp(-ro.Lambda[rows, ro.K]) * policy.value(xK, pK))
        V.extend(run + tail)
        V_run.extend(run)
        divs.extend(np.where(live, disc * ro.u * dt, 0.0).sum(axis=1))
        ruined.extend(ro.ruined)
        ri[0].extend(inc.sum(axis=1))
        ri[1].extend((inc * inc).sum(axis=1))
        ri[2].extend(live.sum(axis=1))
        x0 = ro.x[:, :-1]
        ok = live & (x0 > control.ruin_eps)
        r = np.where(ok, (ro.x[:, 1:] - x0) / np.where(ok, x0, 1.0), 0.0)
        sr[0].extend(r.sum(axis=1))
        sr[1].extend((r * r).sum(axis=1))
        sr[2].extend(ok.sum(axis=1))
    m = len(V)
    mean_V = math.fsum(V) / m
    var_V = math.fsum((v - mean_V) ** 2 for v in V) / (m - 1)
    mean_run = math.fsum(V_run) / m
    var_run = math.fsum((v - mean_run) ** 2 for v in V_run) / (m - 1)
    snr = mean_V / math.sqrt(var_V) if var_V > 0 else math.nan
    return EvalReport(
        mean_V=mean_V, var_V=var_V, snr=snr,
        sharpe_sr=_sharpe(*sr), sharpe_ri=_sharpe(*ri), n_paths=m,
        mean_V_running=mean_run, var_V_running=var_run,
        mean_dividends=math.fsum(divs) / m, ruin_fraction=float(np.mean(ruined)),
        policy=policy.label,
        config={"seed": seed, "env_true": asdict(env_true), "env_filter": asdict(env_filter),
                "control": asdict(control), "sharpe_pooling": "pooled per-step series"})
