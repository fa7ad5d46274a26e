from types import SimpleNamespace

import numpy as np
import pytest

from rsdividend.core import ControlConfig, EnvParams
from rsdividend.filtering import (BeliefState, belief_from_logs, filtered_discount_step,
                                  innovation_increment, run_filter, run_filter_batch,
                                  wonham_logs, wonham_step)
from rsdividend.market import path_rng, simulate_surplus, simulate_uncontrolled_paths

DT = 1 / 252


def flat_env(q12, q21, mu=1.0):
    # EnvParams rejects mu1 == mu2 and zero rates, so the no-signal cases use a bare record
    return SimpleNamespace(mu1=mu, mu2=mu, sigma=0.3, q12=q12, q21=q21, delta1=0.1, delta2=0.3)


def test_innovation_examples(env):
    p = 0.3
    mu_hat = p * env.mu1 + (1 - p) * env.mu2
    assert innovation_increment(mu_hat * DT, p, env, DT) == pytest.approx(0.0, abs=1e-16)
    assert innovation_increment(env.mu1 * DT, 1.0, env, DT) == 0.0
    env2 = EnvParams(sigma=2 * env.sigma)
    dx = 0.01
    assert innovation_increment(dx, p, env2, DT) == pytest.approx(0.5 * innovation_increment(dx, p, env, DT))


def test_belief_state_round_trip():
    b = BeliefState.from_p(0.25)
    assert b.p == pytest.approx(0.25, rel=1e-15)
    with pytest.raises(ValueError):
        BeliefState.from_p(1.0)


def test_no_information_no_transitions_is_constant():
    env = flat_env(0.0, 0.0)
    b = BeliefState.from_p(0.37)
    for dw in np.random.default_rng(0).standard_normal(1000) * np.sqrt(DT):
        b = wonham_step(b, float(dw), env, DT)
    assert b.p == pytest.approx(0.37, rel=1e-14)


def test_zero_snr_stationary_start_is_constant():
    env = flat_env(0.36, 2.89)
    p0 = 2.89 / 3.25
    b = BeliefState.from_p(p0)
    for dw in np.random.default_rng(1).standard_normal(2520) * np.sqrt(DT):
        b = wonham_step(b, float(dw), env, DT)
    assert abs(b.p - p0) < 1e-13


def test_zero_snr_mean_reversion():
    env = flat_env(0.36, 2.89)
    for p0 in (0.05, 0.5, 0.99):
        b = BeliefState.from_p(p0)
        for _ in range(252 * 10):
            b = wonham_step(b, 0.0, env, DT)
        assert b.p == pytest.approx(2.89 / 3.25, abs=1e-6)


def test_interior_under_extreme_innovations(env):
    rng = np.random.default_rng(2)
    n_paths, n_steps = 1000, 1000
    l1 = np.full(n_paths, np.log(0.5))
    l2 = l1.copy()
    for _ in range(n_steps):
        dw = rng.choice([-6.0, 6.0], n_paths) * np.sqrt(DT) * rng.random(n_paths) ** 0.1
        l1, l2 = wonham_logs(l1, l2, dw, env, DT)
        assert np.all(np.isfinite(l1)) and np.all(np.isfinite(l2))
        p = belief_from_logs(l1, l2)
        assert np.all((p > 0) & (p < 1))


def test_persistent_extreme_innovations(env):
    # one-sided shocks drive the belief hard against an edge
    for sign in (1.0, -1.0):
        l1, l2 = np.log(0.5), np.log(0.5)
        for _ in range(20_000):
            l1, l2 = wonham_logs(l1, l2, sign * 6 * np.sqrt(DT), env, DT)
        p = belief_from_logs(l1, l2)
        assert np.isfinite(l1) and np.isfinite(l2) and 0.0 < p < 1.0


def test_true_filter_beats_swapped(env, control):
    rp = simulate_uncontrolled_paths(env, control, 10.0, 1, seed=11)[0]
    swapped = EnvParams(mu1=env.mu2, mu2=env.mu1)
    truth = (rp.regimes == 1).astype(float)
    err_true = np.mean(np.abs(run_filter(rp.surplus, env, DT, 0.5) - truth))
    err_swap = np.mean(np.abs(run_filter(rp.surplus, swapped, DT, 0.5) - truth))
    assert err_true < err_swap


def test_belief_variance_peaks_in_middle(env):
    ps = np.linspace(0.02, 0.98, 49)
    rng = np.random.default_rng(3)
    dw = rng.standard_normal(200_000) * np.sqrt(DT)
    var = []
    for p in ps:
        l1, l2 = wonham_logs(np.log(p), np.log1p(-p), dw, env, DT)
        var.append(belief_from_logs(l1, l2).var())
    assert abs(ps[int(np.argmax(var))] - 0.5) <= 0.06


def test_filtered_discount(env):
    assert filtered_discount_step(1.0, env, DT) == pytest.approx(env.delta1 * DT)
    assert filtered_discount_step(0.0, env, DT) == pytest.approx(env.delta2 * DT)
    assert filtered_discount_step(0.5, env, DT) == pytest.approx(0.2 * DT)
    p = run_filter(simulate_uncontrolled_paths(env, ControlConfig(), 5.0, 1, seed=4)[0].surplus, env, DT, 0.5)
    lam = np.cumsum(filtered_discount_step(p, env, DT))
    assert np.all(np.diff(lam) > 0)


def test_batch_matches_single(env, control):
    paths = simulate_uncontrolled_paths(env, control, 2.0, 4, seed=6)
    X = np.stack([rp.surplus for rp in paths])
    batch = run_filter_batch(X, env, DT, 0.5)
    for i, rp in enumerate(paths):
        assert np.allclose(batch[i], run_filter(rp.surplus, env, DT, 0.5), rtol=0, atol=1e-14)


def test_dividends_are_added_back(env):
    cfg = ControlConfig()
    n = 2520
    reg = np.ones(n + 1, dtype=np.int8)
    noise = path_rng(0, 0, 1).standard_normal(n)
    u = np.full(n, 0.4)
    paid = simulate_surplus(env, cfg, reg, u, noise=noise)
    free = simulate_surplus(env, cfg, reg, 0.0, noise=noise)
    assert paid.alive and free.alive
    p_paid = run_filter(paid.surplus, env, DT, 0.5, dividends=u)
    p_free = run_filter(free.surplus, env, DT, 0.5)
    assert np.allclose(p_paid, p_free, rtol=0, atol=1e-9)
