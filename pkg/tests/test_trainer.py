from dataclasses import replace

import numpy as np
import pytest

from _fd import central_diff, rel_err
from stackelberg_ppo import trainer
from stackelberg_ppo.envs import TabularCoDesignSMG
from stackelberg_ppo.errors import NumericsError
from stackelberg_ppo.surrogates import fisher_vp
from stackelberg_ppo.trainer import (
    TrainConfig,
    balance_alpha,
    lambda_sweep,
    leader_stackelberg_grad,
    summarize_sweep,
    train,
)

SMALL = TrainConfig(env="tabular", epochs=4, batch_trajectories=16, ppo_iters=3, leader_lr=0.05,
                    follower_lr=0.05, value_lr=0.01, gamma=0.9)
EXACT_CG = dict(cg_max_iters=100, cg_rel_tol=1e-12)


def test_zero_epochs_returns_initial_parameters():
    res = train(TabularCoDesignSMG(), replace(SMALL, epochs=0), init_params=(np.ones(6), np.zeros(12)))
    assert res.metrics == [] and res.leader_steps == []
    np.testing.assert_array_equal(res.leader_params, 1.0)
    assert np.isnan(res.final_return(10))


def test_training_is_bit_reproducible():
    a = train(TabularCoDesignSMG(), SMALL)
    b = train(TabularCoDesignSMG(), SMALL)
    assert a.leader_params.tobytes() == b.leader_params.tobytes()
    assert a.follower_params.tobytes() == b.follower_params.tobytes()
    assert [m.as_row() for m in a.metrics] == [m.as_row() for m in b.metrics]
    c = train(TabularCoDesignSMG(), replace(SMALL, seed=1))
    assert not np.array_equal(a.leader_params, c.leader_params)


def test_metrics_bookkeeping():
    seen = []
    res = train(TabularCoDesignSMG(), SMALL, on_epoch=seen.append)
    assert seen == res.metrics
    steps = [m.env_steps for m in res.metrics]
    assert all(b > a for a, b in zip(steps, steps[1:]))
    assert [m.epoch for m in res.metrics] == list(range(SMALL.epochs))
    assert len(res.leader_steps) == SMALL.epochs * SMALL.ppo_iters
    assert all(m.wall_ms == 0.0 for m in res.metrics)
    assert all(0.0 <= m.clip_frac <= 1.0 and m.kl >= 0.0 for m in res.metrics)


def test_balance_alpha_examples():
    assert balance_alpha(np.array([2.0]), np.array([4.0]), 0.0) == 0.5
    assert balance_alpha(np.array([3.0, 4.0]), np.array([1.0]), 1e-8) == 1.0
    assert balance_alpha(np.array([1.0]), np.zeros(3), 1e-8) == 1.0


def test_zero_rhs_leaves_direct_gradient(oracle, point, exact_batch):
    b = replace(exact_batch, follower_advantages=np.zeros_like(exact_batch.follower_advantages))
    sg = leader_stackelberg_grad(b, oracle.leader_policy, oracle.follower_policy, *point, SMALL)
    assert not np.any(sg.response)
    assert sg.alpha == 1.0 and sg.cg.iters_used == 0
    np.testing.assert_array_equal(sg.assembled, sg.direct)


def _lookahead_term(oracle, tl, tf, M, eta):
    """Chain-rule part of ``dPhi/dthetaL`` for ``Phi = J^L(thetaL, thetaF + eta M grad_F J^F)``, over ``eta``.

    The partial derivative at the moved follower is removed, leaving only the
    path through the follower update.
    """

    def moved(x):
        return tf + eta * M @ oracle.enumerate_grad(x, tf, "JF/thetaF")

    total = central_diff(lambda x: oracle.enumerate_objectives(x, moved(x))[0], tl, 1e-5)
    return (total - oracle.enumerate_grad(tl, moved(tl), "JL/thetaL")) / eta


def test_response_sign_follows_lookahead(oracle, point, exact_batch):
    """The added response term is the leader's first-order gain through a follower ascent step."""
    tl, tf = point
    F = oracle.follower_policy
    cfg = replace(SMALL, fisher_lambda=5.0, **EXACT_CG)
    A = np.column_stack([fisher_vp(exact_batch, F, tf, e, 5.0) for e in np.eye(F.param_dim)])
    target = oracle.game.gamma**oracle.game.leader_horizon * _lookahead_term(oracle, tl, tf, np.linalg.inv(A), 1e-4)
    sg = leader_stackelberg_grad(exact_batch, oracle.leader_policy, F, tl, tf, cfg)
    assert rel_err(sg.response, target) <= 1e-3
    np.testing.assert_allclose(sg.assembled, sg.direct + sg.alpha * sg.response, atol=1e-15)
    flipped = leader_stackelberg_grad(exact_batch, oracle.leader_policy, F, tl, tf, replace(cfg, response_sign=-1))
    np.testing.assert_allclose(flipped.assembled, sg.direct - sg.alpha * sg.response, atol=1e-15)


def test_infinite_lambda_is_vanilla():
    inf = train(TabularCoDesignSMG(), replace(SMALL, fisher_lambda=float("inf")))
    van = train(TabularCoDesignSMG(), replace(SMALL, mode="vanilla"))
    np.testing.assert_array_equal(inf.leader_params, van.leader_params)
    assert inf.leader_steps == [] and all(m.alpha == 0.0 for m in inf.metrics)


def test_single_lambda_sweep_matches_train():
    rows = lambda_sweep(lambda cfg: TabularCoDesignSMG(gamma=cfg.gamma), SMALL, [2.0], [3])
    direct = train(TabularCoDesignSMG(gamma=0.9), replace(SMALL, fisher_lambda=2.0, seed=3))
    assert len(rows) == 1 and rows[0].seed == 3 and rows[0].fisher_lambda == 2.0
    assert rows[0].final_return == direct.final_return(SMALL.final_window)
    (lam, mean, std, n), = summarize_sweep(rows)
    assert (lam, mean, std, n) == (2.0, rows[0].final_return, 0.0, 1)


def test_analytic_mode_runs():
    res = train(TabularCoDesignSMG(), replace(SMALL, mode="analytic_hessian", fisher_lambda=50.0))
    assert np.all(np.isfinite(res.leader_params))
    assert all(r.cg_iters >= 1 for r in res.leader_steps)


def test_numerics_error_names_rng_key(monkeypatch):
    def boom(*args, **kwargs):
        raise NumericsError("bad curvature")

    monkeypatch.setattr(trainer, "solve_response", boom)
    with pytest.raises(NumericsError, match=r"seed=3, purpose='rollout', index=0"):
        train(TabularCoDesignSMG(), replace(SMALL, seed=3))


@pytest.mark.parametrize("kwargs", [dict(mode="newton"), dict(fisher_lambda=-1.0), dict(ppo_clip_eps=1.5),
                                    dict(epochs=-1), dict(leader_lr=0.0), dict(response_sign=0),
                                    dict(gamma=1.5), dict(final_window=0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)
