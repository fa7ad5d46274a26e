import csv

import numpy as np
import pytest

from rsdividend.core import ConfigError, ControlConfig, EnvParams
from rsdividend.market import (RawPath, path_rng, simulate_regime_chain,
                               simulate_regime_chain_rates, simulate_surplus,
                               simulate_uncontrolled_paths, write_paths_csv)

DT = 1 / 252


def runs(chain, state):
    """Lengths of maximal runs of ``state`` that start and end inside the chain."""
    s = (np.asarray(chain) == state).astype(np.int8)
    edges = np.diff(np.concatenate([[0], s, [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    lengths = ends - starts
    inner = (starts > 0) & (ends < len(s))
    return lengths[inner]


def test_absorbing_regime():
    rng = np.random.default_rng(0)
    chain = simulate_regime_chain_rates(0.0, 2.89, 252 * 50, DT, rng, start=1)
    assert np.all(chain == 1)


def test_stationary_fraction(env):
    chain = simulate_regime_chain(env, 252 * 10_000, DT, path_rng(1, 0, 0))
    frac = np.mean(chain == 1)
    assert abs(frac - env.q21 / (env.q12 + env.q21)) < 0.01


def test_mean_holding_time(env):
    chain = simulate_regime_chain(env, 252 * 35_000, DT, path_rng(2, 0, 0))
    hold = runs(chain, 1) * DT
    assert len(hold) >= 10_000
    assert abs(hold.mean() * env.q12 - 1.0) < 0.05


def test_rate_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        simulate_regime_chain_rates(300.0, 1.0, 10, DT, rng)
    with pytest.raises(ConfigError):
        simulate_regime_chain_rates(-1.0, 1.0, 10, DT, rng)


def test_deterministic_line():
    env = EnvParams(sigma=1e-14)
    cfg = ControlConfig()
    n = 2520
    path = simulate_surplus(env, cfg, np.ones(n + 1), 0.0, np.random.default_rng(0))
    assert np.allclose(path.surplus, 1.0 + env.mu1 * path.times, atol=1e-10)
    assert path.alive


def test_deterministic_drain_ruin():
    env = EnvParams(sigma=1e-14)
    cfg = ControlConfig(cap_a=2.0)
    n = 2520
    path = simulate_surplus(env, cfg, np.ones(n + 1), 2.0, np.random.default_rng(0))
    k_ruin = int(np.argmax(path.surplus == 0.0))
    t_expect = cfg.x0 / (2.0 - env.mu1)
    assert abs(path.times[k_ruin] - t_expect) <= DT + 1e-9
    assert not path.alive


def test_absorption_freezes_surplus_and_dividends():
    env = EnvParams()
    cfg = ControlConfig(x0=0.05, cap_a=3.0)
    path = simulate_surplus(env, cfg, np.full(2521, 2), 3.0, np.random.default_rng(4))
    k = int(np.argmax(path.surplus == 0.0))
    assert k > 0
    assert np.all(path.surplus[k:] == 0.0)
    assert np.all(path.dividends[k:] == 0.0)


def test_dividend_range_checked():
    with pytest.raises(ValueError):
        simulate_surplus(EnvParams(), ControlConfig(), np.ones(11), 1.5, np.random.default_rng(0))


def test_mean_terminal_surplus(env):
    cfg = ControlConfig(p0=env.stationary_p)
    years = 10.0
    paths = simulate_uncontrolled_paths(env, cfg, years, 10_000, seed=3)
    gain = np.array([rp.surplus[-1] - cfg.x0 for rp in paths])
    pi1 = env.stationary_p
    expect = (pi1 * env.mu1 + (1 - pi1) * env.mu2) * years
    se = gain.std(ddof=1) / np.sqrt(len(gain))
    assert abs(gain.mean() - expect) < 3 * se


def test_increment_variance(env):
    cfg = ControlConfig()
    rp = simulate_uncontrolled_paths(env, cfg, 1_000_000 * cfg.dt, 1, seed=5)[0]
    mu = np.where(rp.regimes[:-1] == 1, env.mu1, env.mu2)
    resid = np.diff(rp.surplus) - mu * cfg.dt
    assert len(resid) == 1_000_000
    assert abs(resid.var() / (env.sigma ** 2 * cfg.dt) - 1.0) < 0.01


def test_reproducible_paths(env, control):
    a = simulate_uncontrolled_paths(env, control, 2.0, 3, seed=9)
    b = simulate_uncontrolled_paths(env, control, 2.0, 3, seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x.surplus, y.surplus) and np.array_equal(x.regimes, y.regimes)
    # a path does not depend on which batch produced it
    c = simulate_uncontrolled_paths(env, control, 2.0, 1, seed=9, first_index=2)[0]
    assert np.array_equal(c.surplus, a[2].surplus)
    d = simulate_uncontrolled_paths(env, control, 2.0, 1, seed=9, stream_base=8)[0]
    assert not np.array_equal(d.surplus, a[0].surplus)


def test_rawpath_lengths():
    with pytest.raises(ValueError):
        RawPath(np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3))


def test_paths_csv(tmp_path, env, control):
    paths = simulate_uncontrolled_paths(env, control, 0.1, 2, seed=1)
    out = tmp_path / "paths.csv"
    write_paths_csv(paths, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["path_id", "k", "t", "x", "regime", "u"]
    n = len(paths[0].times)
    assert len(rows) == 1 + 2 * n
    assert float(rows[n + 1][3]) == paths[1].surplus[0]
