import csv
import math

import numpy as np
import pytest

from rsdividend.core import ControlConfig, EnvParams, entropy_reward
from rsdividend.episodes import PolicyTable
from rsdividend.evaluation import (TABLE_COLUMNS, DegenerateEvaluation, FrozenPolicy, evaluate,
                                   write_table_csv)
from rsdividend.fd import PGrid, fd_at_splits
from rsdividend.parametric import ParametricModel
from rsdividend.trainer import estimate_environment


def flat_policy(label="flat"):
    """v_x = 0 everywhere and no terminal value."""
    table = PolicyTable(1, np.ones(2), np.zeros((2, 1, 1)), np.linspace(0, 1, 3), np.zeros((2, 3)))
    return FrozenPolicy(table, lambda x, p: np.zeros_like(np.asarray(x, dtype=float)), label)


@pytest.fixture(scope="module")
def fd_coarse():
    return fd_at_splits(EnvParams(), 1.0, 1.0, (0.5, 0.5), (0.5, 0.5), PGrid(2000))


def test_snr_identity(env, control, fd_coarse):
    rep = evaluate(FrozenPolicy.from_fd(fd_coarse), env, env, control, n_paths=200, seed=1)
    assert rep.var_V > 0
    assert rep.snr ** 2 * rep.var_V == pytest.approx(rep.mean_V ** 2, rel=1e-14)
    assert rep.policy == "Optimal" and rep.n_paths == 200


def test_permutation_invariance(env, control, fd_coarse):
    pol = FrozenPolicy.from_fd(fd_coarse)
    idx = np.arange(300)
    a = evaluate(pol, env, env, control, seed=2, indices=idx, chunk=64)
    b = evaluate(pol, env, env, control, seed=2, indices=np.random.default_rng(0).permutation(idx), chunk=100)
    assert a.row() == b.row()
    assert a.mean_V_running == b.mean_V_running and a.mean_dividends == b.mean_dividends


def test_deterministic_annuity():
    env = EnvParams(mu1=5.0, mu2=0.5, sigma=1e-6, q12=1e-9, q21=1e-9)
    cfg = ControlConfig(p0=1 - 1e-9)
    rep = evaluate(flat_policy(), env, env, cfg, n_paths=20, seed=3)
    H = entropy_reward(0.0, cfg.lam, cfg.cap_a)
    k = np.arange(cfg.n_steps)
    annuity = math.fsum(np.exp(-env.delta1 * k * cfg.dt) * cfg.dt)
    assert rep.ruin_fraction == 0.0
    assert rep.mean_V_running == pytest.approx(H * annuity, rel=1e-6)
    assert rep.mean_V == rep.mean_V_running
    assert rep.var_V_running < 1e-12


def test_degenerate_start(env):
    cfg = ControlConfig(x0=1e-9)
    with pytest.raises(DegenerateEvaluation):
        evaluate(flat_policy(), env, env, cfg, n_paths=10)
    with pytest.raises(ValueError):
        evaluate(flat_policy(), env, env, ControlConfig(), n_paths=1)


def test_ruin_paths_get_no_terminal_value(env):
    cfg = ControlConfig(cap_a=5.0)
    pol = FrozenPolicy(flat_policy().table, lambda x, p: np.full(np.shape(x), 1e6), "big")
    rep = evaluate(pol, env, env, cfg, n_paths=50, seed=1)
    assert rep.ruin_fraction == 1.0 and rep.mean_V == rep.mean_V_running


def test_table_csv(tmp_path, env, control, fd_coarse):
    reps = [evaluate(FrozenPolicy.from_fd(fd_coarse), env, env, control, n_paths=20, seed=0),
            evaluate(flat_policy(), env, env, control, n_paths=20, seed=0)]
    out = tmp_path / "evaluation_table.csv"
    write_table_csv(reps, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == TABLE_COLUMNS and [r[0] for r in rows[1:]] == ["Optimal", "flat"]
    assert float(rows[1][1]) == reps[0].mean_V


def test_estimated_filtering_lowers_variance(env, control, ctd_desk_run):
    model = ParametricModel((env.delta1, env.delta2), control.lam, control.cap_a)
    pol = FrozenPolicy.from_theta(model, ctd_desk_run.theta, "CTD(0)")
    est, _ = estimate_environment(env, control, seed=2024, index=0)
    true_rep = evaluate(pol, env, env, control, n_paths=10_000, seed=77)
    est_rep = evaluate(pol, env, est, control, n_paths=10_000, seed=77)
    assert est_rep.var_V < true_rep.var_V, (est_rep.var_V, true_rep.var_V)
