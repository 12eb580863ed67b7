import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackelberg_ppo.advantage import (
    AdvantageConfig,
    ValueFunction,
    compute_follower_advantages,
    compute_leader_advantages,
    discounted_returns,
    fit_value,
)
from stackelberg_ppo.errors import NumericsError
from stackelberg_ppo.numerics import make_rng
from stackelberg_ppo.smg import RolloutBatch, Trajectory


def make_traj(leader_rewards, follower_rewards, truncated=False, f_features=None):
    T, K = len(leader_rewards), len(follower_rewards)
    return Trajectory(
        leader_states=list(range(T + 1)),
        leader_obs=np.zeros(T, dtype=int),
        leader_actions=np.zeros(T, dtype=int),
        leader_rewards=np.asarray(leader_rewards, dtype=float),
        leader_logp=np.zeros(T),
        leader_masks=None,
        leader_value_features=np.ones((T, 1)),
        terminal_morphology=0,
        follower_states=list(range(K + 1)),
        follower_obs=np.zeros(K, dtype=int),
        follower_actions=np.zeros(K, dtype=int),
        follower_rewards=np.asarray(follower_rewards, dtype=float),
        follower_logp=np.zeros(K),
        follower_value_features=np.ones((K, 1)) if f_features is None else f_features,
        follower_final_value_features=np.ones(1),
        truncated=truncated,
    )


def batch_of(trajs, gamma):
    return RolloutBatch.from_trajectories(trajs, np.zeros(1), np.zeros(1), gamma)


def const_vf(value, phase="follower"):
    return replace(ValueFunction.create(1, phase), params=np.array([float(value)]))


def gae_oracle(r, v, boot, gamma, lam):
    """Explicit double sum of discounted TD residuals."""
    n = len(r)
    vv = list(v) + [boot]
    delta = [r[t] + gamma * vv[t + 1] - vv[t] for t in range(n)]
    return [sum((gamma * lam) ** (j - t) * delta[j] for j in range(t, n)) for t in range(n)]


def test_delta_recursion_example():
    r, gamma, lam = [1.0, 2.0, 3.0], 0.9, 0.95
    b = compute_follower_advantages(batch_of([make_traj([0.0], r)], gamma), const_vf(0.5),
                                    AdvantageConfig(gamma, lam, normalize=False))
    np.testing.assert_allclose(b.follower_advantages, gae_oracle(r, [0.5] * 3, 0.0, gamma, lam), atol=1e-14)


def test_truncation_bootstraps_with_value():
    r, gamma, lam = [1.0, 2.0], 0.9, 0.95
    b = compute_follower_advantages(batch_of([make_traj([0.0], r, truncated=True)], gamma), const_vf(0.5),
                                    AdvantageConfig(gamma, lam, normalize=False))
    np.testing.assert_allclose(b.follower_advantages, gae_oracle(r, [0.5] * 2, 0.5, gamma, lam), atol=1e-14)


def test_one_step_td_and_reward_to_go():
    r = [1.0, -2.0, 4.0]
    batch = batch_of([make_traj([0.0], r)], 1.0)
    td = compute_follower_advantages(batch, const_vf(0.0), AdvantageConfig(1.0, 0.0, normalize=False))
    np.testing.assert_array_equal(td.follower_advantages, r)
    mc = compute_follower_advantages(batch, const_vf(0.0), AdvantageConfig(1.0, 1.0, normalize=False))
    np.testing.assert_allclose(mc.follower_advantages, [3.0, 2.0, 4.0])


def test_leader_examples():
    cfg = AdvantageConfig(0.5, 1.0, normalize=False)
    b = compute_leader_advantages(batch_of([make_traj([2.0], [10.0])], 0.5), const_vf(0.0, "leader"), cfg)
    assert b.leader_advantages[0] == pytest.approx(7.0)
    z = compute_leader_advantages(batch_of([make_traj([0.0, 0.0], [0.0, 0.0])], 0.5), const_vf(0.0, "leader"), cfg)
    np.testing.assert_array_equal(z.leader_advantages, 0.0)


def test_phase_mismatch_rejected():
    batch = batch_of([make_traj([0.0], [1.0])], 0.9)
    with pytest.raises(ValueError):
        compute_follower_advantages(batch, const_vf(0.0, "leader"), AdvantageConfig())
    with pytest.raises(ValueError):
        AdvantageConfig(gamma=0.0)
    with pytest.raises(ValueError):
        AdvantageConfig(gae_lambda=1.5)


rewards = st.lists(st.floats(-5, 5), min_size=1, max_size=6)


@given(st.lists(rewards, min_size=1, max_size=4), st.floats(0.05, 1.0), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_lambda_one_is_return_minus_baseline(segments, gamma, v0):
    batch = discounted_returns(batch_of([make_traj([0.0], r) for r in segments], gamma))
    b = compute_follower_advantages(batch, const_vf(v0), AdvantageConfig(gamma, 1.0, normalize=False))
    np.testing.assert_allclose(b.follower_advantages, batch.follower_returns - v0, atol=1e-10)


@given(st.lists(rewards, min_size=2, max_size=4), st.floats(-3, 3), st.floats(-50, 50))
@settings(max_examples=40, deadline=None)
def test_constant_value_shift(segments, v0, c):
    batch = batch_of([make_traj([0.0], r) for r in segments], 1.0)
    raw = AdvantageConfig(1.0, 1.0, normalize=False)
    a = compute_follower_advantages(batch, const_vf(v0), raw).follower_advantages
    b = compute_follower_advantages(batch, const_vf(v0 + c), raw).follower_advantages
    np.testing.assert_allclose(b, a - c, atol=1e-10)
    norm = AdvantageConfig(1.0, 1.0, normalize=True)
    na = compute_follower_advantages(batch, const_vf(v0), norm).follower_advantages
    nb = compute_follower_advantages(batch, const_vf(v0 + c), norm).follower_advantages
    if np.std(a) > 1e-3:
        np.testing.assert_allclose(na, nb, atol=1e-10)


def test_normalized_advantages_moments():
    rng = make_rng(0, "t")
    batch = batch_of([make_traj([rng.normal()], rng.normal(size=3)) for _ in range(20)], 0.9)
    b = compute_follower_advantages(batch, const_vf(0.0), AdvantageConfig(0.9, 0.95, normalize=True))
    assert abs(b.follower_advantages.mean()) < 1e-12
    assert b.follower_advantages.std() == pytest.approx(1.0, abs=1e-6)


def test_fit_value_constant_target_and_monotone_loss():
    rng = make_rng(1, "t")
    trajs = [make_traj([0.0], [3.0], f_features=rng.normal(size=(1, 2))) for _ in range(64)]
    vf = ValueFunction.create(2, "follower", bias=True)
    fitted, losses = fit_value(vf, batch_of(trajs, 0.9), lr=0.01, epochs=3000, return_losses=True)
    np.testing.assert_allclose(fitted.predict(rng.normal(size=(5, 2))), 3.0, atol=1e-3)
    assert np.all(np.diff(losses[:200]) <= 1e-12)


def test_fit_value_zero_epochs_and_nan():
    vf = const_vf(0.25)
    batch = batch_of([make_traj([0.0], [1.0, 2.0])], 0.9)
    assert fit_value(vf, batch, 0.1, 0) is vf
    bad = batch_of([make_traj([0.0], [np.inf])], 0.9)
    with pytest.raises(NumericsError):
        fit_value(vf, bad, 0.1, 2)


@pytest.fixture(scope="module")
def big_tabular_batch(game, mc_batch):
    batch = discounted_returns(mc_batch)
    lvf = fit_value(ValueFunction.create(game.leader_value_dim, "leader"), batch, 0.05, 1500)
    fvf = fit_value(ValueFunction.create(game.follower_value_dim, "follower"), batch, 0.05, 1500)
    return batch, lvf, fvf


def test_fitted_values_match_enumeration(game, oracle, point, big_tabular_batch):
    batch, lvf, fvf = big_tabular_batch
    vl, vfo = oracle.exact_values(*point)
    # only cells visited at least 1000 times carry a regression target
    l_counts = batch.leader_value_features.sum(axis=0)
    checked = 0
    for t in range(game.leader_horizon):
        for s in range(3):
            feat = game.leader_value_features(s, t)
            if l_counts @ feat >= 1000:
                assert lvf.predict(feat)[0] == pytest.approx(vl[t, s], abs=1e-2)
                checked += 1
    assert checked == 3
    counts = batch.follower_value_features.sum(axis=0)
    for m in range(3):
        for k in range(game.follower_max_steps):
            for s in range(2):
                feat = game.follower_value_features(s, k, m)
                if counts @ feat >= 1000:
                    assert fvf.predict(feat)[0] == pytest.approx(vfo[m, k, s], abs=1e-2)


def test_leader_advantages_mean_zero(big_tabular_batch):
    batch, lvf, _ = big_tabular_batch
    adv = compute_leader_advantages(batch, lvf, AdvantageConfig(batch.gamma, 1.0, normalize=False)).leader_advantages
    assert abs(adv.mean()) <= 3 * adv.std(ddof=1) / math.sqrt(adv.size)
