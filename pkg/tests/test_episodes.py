import numpy as np
import pytest
from scipy import stats

from rsdividend.core import ControlConfig, EnvParams, gibbs_cdf, gibbs_density, sample_action
from rsdividend.episodes import (HORIZON, RUIN, PolicyTable, _sample, fd_policy, policy_density_bounds,
                                 rollout)
from rsdividend.filtering import filtered_discount_step, run_filter
from rsdividend.fd import PGrid, fd_at_splits


def zero_policy():
    """v_x identically zero: the Gibbs density with tilt 1 everywhere."""
    return PolicyTable(1, np.ones(2), np.zeros((2, 1, 1)), np.linspace(0, 1, 3), np.zeros((2, 3)))


@pytest.fixture(scope="module")
def fd_table():
    env = EnvParams()
    sol = fd_at_splits(env, 1.0, 1.0, (0.5, 0.5), (0.5, 0.5), PGrid(2000))
    return fd_policy(sol)


def test_kernel_sampler_matches_core():
    rng = np.random.default_rng(0)
    for th, z in zip(rng.normal(0, 20, 2000), rng.random(2000)):
        for a in (0.6, 1.0, 3.0):
            assert _sample(th, z, 1.0, a) == pytest.approx(sample_action(th, z, 1.0, a), rel=1e-12, abs=1e-15)
    assert _sample(1e-9, 0.4, 1.0, 2.0) == pytest.approx(0.8)


def test_kernel_filter_matches_reference(env, control, fd_table):
    ro = rollout(fd_table, env, env, control, seed=3, indices=range(4))
    for r in range(4):
        ep = ro.episode(r)
        if ep.termination == RUIN:
            continue
        p_ref = run_filter(ep.x, env, control.dt, control.p0, dividends=ep.u)
        assert np.allclose(ep.p, p_ref, rtol=0, atol=1e-11)
        lam = np.concatenate([[0.0], np.cumsum(filtered_discount_step(ep.p[:-1], env, control.dt))])
        assert np.allclose(ep.Lambda, lam, rtol=1e-12, atol=0)
        assert np.all(np.diff(ep.Lambda) > 0)


def test_estimated_filter_is_used(env, control, fd_table):
    other = EnvParams(mu1=1.5, mu2=0.2, q12=1.0, q21=2.0, delta1=0.05, delta2=0.4)
    a = rollout(fd_table, env, env, control, seed=3, indices=[0])
    b = rollout(fd_table, env, other, control, seed=3, indices=[0])
    assert not np.array_equal(a.p, b.p)
    ep = b.episode(0)
    p_ref = run_filter(ep.x, other, control.dt, control.p0, dividends=ep.u)
    assert np.allclose(ep.p, p_ref, rtol=0, atol=1e-11)


def test_rollout_is_deterministic_and_batch_free(env, control, fd_table):
    a = rollout(fd_table, env, env, control, seed=9, indices=range(5))
    b = rollout(fd_table, env, env, control, seed=9, indices=range(5))
    c = rollout(fd_table, env, env, control, seed=9, indices=[3])
    assert np.array_equal(a.x, b.x) and np.array_equal(a.u, b.u)
    assert np.array_equal(a.x[3], c.x[0]) and np.array_equal(a.u[3], c.u[0])


def test_draining_policy_ruins(env):
    cfg = ControlConfig(cap_a=5.0)
    ro = rollout(zero_policy(), env, env, cfg, seed=1, indices=range(50))
    assert ro.ruined.all()
    for r in range(len(ro)):
        ep = ro.episode(r)
        assert ep.termination == RUIN and ep.x[-1] == 0.0 and np.all(ep.x[:-1] > 0)
        assert np.all(ro.x[r, ep.K:] == 0.0) and np.all(ro.u[r, ep.K:] == 0.0)


def test_horizon_episodes(env, control, fd_table):
    ro = rollout(fd_table, env, env, control, seed=2, indices=range(20))
    ep = next(ro.episode(r) for r in range(20) if not ro.ruined[r])
    assert ep.termination == HORIZON and ep.K == control.n_steps
    assert ep.t[-1] == pytest.approx(control.horizon_T)


def test_zero_gradient_actions_follow_gibbs(env, control):
    ro = rollout(zero_policy(), env, env, control, seed=4, indices=range(40))
    u = np.concatenate([ro.u[r, :ro.K[r]] for r in range(len(ro))])
    assert len(u) > 50_000
    d = stats.kstest(u, lambda s: gibbs_cdf(s, 1.0, control.lam, control.cap_a)).statistic
    assert d < 0.01


def test_density_bounds_strong_admissibility(env, control, fd_table):
    ro = rollout(fd_table, env, env, control, seed=5, indices=range(10))
    vmax = float(np.max(np.abs(ro.vx)))
    lo, hi = policy_density_bounds(vmax, control.lam, control.cap_a)
    assert 0 < lo <= hi < np.inf
    grid = np.linspace(0, control.cap_a, 21)
    for vx in ro.vx[0, ::100]:
        dens = gibbs_density(grid, 1.0 - vx, control.lam, control.cap_a)
        assert np.all(dens >= lo * (1 - 1e-12)) and np.all(dens <= hi * (1 + 1e-12))
