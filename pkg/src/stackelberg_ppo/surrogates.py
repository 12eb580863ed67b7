"""Clipped surrogate gradients and the curvature products used by the leader update.

Every estimator is a weighted sum over the batch.  Trajectory weights come
from ``batch.weights`` (``1/N`` for sampled batches, exact probabilities for
an enumerated batch).  First-order estimators additionally weight a step at
time ``t`` of its phase by ``gamma**t`` so that they are unbiased for the
discounted objectives.

Clipping gates:

* single-ratio surrogates use the PPO rule: a step contributes
  ``r * A * score`` unless its ratio has already moved past ``1 +/- eps`` in
  the direction that increases ``r * A``;
* the leader factor of the cross term uses a hard clamp of ``r`` to
  ``[1 - eps, 1 + eps]``, whose gradient is zero outside the range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UnsupportedError
from .policies import PolicyFamily
from .smg import RolloutBatch


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float | None = 0.2

    def __post_init__(self):
        if self.epsilon is not None and not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"clip epsilon must lie in (0, 1) or be None, got {self.epsilon}")


NO_CLIP = ClipConfig(None)


def _require(adv, name):
    if adv is None:
        raise ValueError(f"batch has no {name}; compute advantages first")
    return adv


def ppo_gate(ratio: np.ndarray, adv: np.ndarray, clip: ClipConfig) -> np.ndarray:
    """1 where the unclipped branch of ``min(r A, clip(r) A)`` is active, else 0."""
    if clip.epsilon is None:
        return np.ones_like(ratio)
    eps = clip.epsilon
    blocked = ((adv > 0) & (ratio >= 1.0 + eps)) | ((adv < 0) & (ratio <= 1.0 - eps))
    return np.where(blocked, 0.0, 1.0)


def clamp_gate(ratio: np.ndarray, clip: ClipConfig) -> np.ndarray:
    """Derivative indicator of ``clamp(r, 1 - eps, 1 + eps)``."""
    if clip.epsilon is None:
        return np.ones_like(ratio)
    eps = clip.epsilon
    return ((ratio > 1.0 - eps) & (ratio < 1.0 + eps)).astype(np.float64)


def leader_ratio_and_score(batch: RolloutBatch, policy: PolicyFamily, params):
    lp = policy.logp(params, batch.leader_obs, batch.leader_actions, batch.leader_masks)
    score = policy.score(params, batch.leader_obs, batch.leader_actions, batch.leader_masks)
    return np.exp(lp - batch.leader_logp), score


def follower_ratio_and_score(batch: RolloutBatch, policy: PolicyFamily, params):
    lp = policy.logp(params, batch.follower_obs, batch.follower_actions)
    score = policy.score(params, batch.follower_obs, batch.follower_actions)
    return np.exp(lp - batch.follower_logp), score


def _segment_sum(rows: np.ndarray, seg: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n,) + rows.shape[1:])
    np.add.at(out, seg, rows)
    return out


def leader_direct_grad(batch: RolloutBatch, leader_policy: PolicyFamily, params, clip: ClipConfig) -> np.ndarray:
    """Gradient of the clipped leader surrogate at ``params`` (behavior snapshot in the batch)."""
    adv = _require(batch.leader_advantages, "leader advantages")
    ratio, score = leader_ratio_and_score(batch, leader_policy, params)
    coef = batch.leader_step_weights * ppo_gate(ratio, adv, clip) * ratio * adv
    return coef @ score


def _follower_pg(batch, follower_policy, params, clip):
    adv = _require(batch.follower_advantages, "follower advantages")
    ratio, score = follower_ratio_and_score(batch, follower_policy, params)
    coef = batch.follower_step_weights * ppo_gate(ratio, adv, clip) * ratio * adv
    return coef @ score


def leader_grad_wrt_follower(batch: RolloutBatch, follower_policy: PolicyFamily, params, clip: ClipConfig) -> np.ndarray:
    """Gradient of the leader objective in the follower's parameters.

    The follower phase enters the leader objective shifted by ``gamma**T``,
    and the follower advantage carries the signal.
    """
    return batch.gamma**batch.leader_horizon * _follower_pg(batch, follower_policy, params, clip)


def follower_ppo_grad(batch: RolloutBatch, follower_policy: PolicyFamily, params, clip: ClipConfig) -> np.ndarray:
    """Clipped PPO policy gradient of the follower's own objective."""
    return _follower_pg(batch, follower_policy, params, clip)


def _check_v(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise DimensionError(f"direction has shape {v.shape}, expected ({dim},)")
    return v


def fisher_vp(batch: RolloutBatch, follower_policy: PolicyFamily, params, v, damping: float = 0.0) -> np.ndarray:
    """``(F + damping * I) v`` with ``F`` the step-averaged follower score outer product."""
    v = _check_v(v, follower_policy.param_dim)
    if len(batch.follower_rewards) == 0:
        return damping * v
    score = follower_policy.score(params, batch.follower_obs, batch.follower_actions)
    w = batch.weights[batch.follower_traj]
    return (w * (score @ v)) @ score / w.sum() + damping * v


def analytic_hessian_vp(batch: RolloutBatch, follower_policy: PolicyFamily, params, v) -> np.ndarray:
    """Score-function estimate of ``(d^2 J^F / d thetaF^2) v``.

    Per trajectory: the log-prob curvature weighted by discounted advantages,
    plus the trajectory's summed score times the discounted advantage-weighted
    score projected on ``v``.
    """
    if not follower_policy.supports_logp_hvp:
        raise UnsupportedError(f"{type(follower_policy).__name__} has no analytic log-prob Hessian")
    v = _check_v(v, follower_policy.param_dim)
    adv = _require(batch.follower_advantages, "follower advantages")
    if len(adv) == 0:
        return np.zeros_like(v)
    obs, act = batch.follower_obs, batch.follower_actions
    score = follower_policy.score(params, obs, act)
    hvp = follower_policy.logp_hvp(params, obs, act, v)
    disc_adv = batch.gamma**batch.follower_k * adv
    w_step = batch.weights[batch.follower_traj]
    term1 = (w_step * disc_adv) @ hvp
    proj = _segment_sum(disc_adv * (score @ v), batch.follower_traj, batch.n_traj)
    ssum = _segment_sum(score, batch.follower_traj, batch.n_traj)
    term2 = (batch.weights * proj) @ ssum
    return term1 + term2


@dataclass(frozen=True)
class TrajectoryScores:
    """Per-trajectory factors of the cross-derivative product estimator.

    ``g_leader[i]`` is the gated sum of leader scores of trajectory ``i``;
    ``h_follower[i]`` is ``gamma**T`` times its gated, discounted,
    advantage-weighted follower score sum.
    """

    g_leader: np.ndarray
    h_follower: np.ndarray
    weights: np.ndarray


def trajectory_scores(batch: RolloutBatch, leader_policy: PolicyFamily, follower_policy: PolicyFamily,
                      leader_params, follower_params, clip: ClipConfig) -> TrajectoryScores:
    adv = _require(batch.follower_advantages, "follower advantages")
    l_ratio, l_score = leader_ratio_and_score(batch, leader_policy, leader_params)
    g = _segment_sum((clamp_gate(l_ratio, clip) * l_ratio)[:, None] * l_score, batch.leader_traj, batch.n_traj)
    h = np.zeros((batch.n_traj, follower_policy.param_dim))
    if len(adv):
        f_ratio, f_score = follower_ratio_and_score(batch, follower_policy, follower_params)
        coef = batch.gamma**batch.follower_k * ppo_gate(f_ratio, adv, clip) * f_ratio * adv
        h = batch.gamma**batch.leader_horizon * _segment_sum(coef[:, None] * f_score, batch.follower_traj, batch.n_traj)
    return TrajectoryScores(g, h, batch.weights)


def cross_jvp(batch: RolloutBatch, leader_policy: PolicyFamily, follower_policy: PolicyFamily, leader_params,
              follower_params, v, clip: ClipConfig, scores: TrajectoryScores | None = None) -> np.ndarray:
    """Product estimator of the leader/follower cross derivative applied to ``v``.

    Returns ``sum_i w_i g_i (h_i . v)``; pass a precomputed ``scores`` cache to
    reuse the per-trajectory factors across directions.
    """
    v = _check_v(v, follower_policy.param_dim)
    if scores is None:
        scores = trajectory_scores(batch, leader_policy, follower_policy, leader_params, follower_params, clip)
    return (scores.weights * (scores.h_follower @ v)) @ scores.g_leader


def follower_kl(batch: RolloutBatch, follower_policy: PolicyFamily, params) -> float:
    """Step-averaged ``KL(pi_params || pi_behavior)`` over the batch's follower states."""
    if len(batch.follower_rewards) == 0:
        return 0.0
    kl = follower_policy.kl(params, batch.behavior_follower_params, batch.follower_obs)
    w = batch.weights[batch.follower_traj]
    return float(w @ kl / w.sum())


def follower_clip_fraction(batch: RolloutBatch, follower_policy: PolicyFamily, params, eps: float) -> float:
    """Weighted fraction of follower steps whose ratio left ``[1 - eps, 1 + eps]``."""
    if len(batch.follower_rewards) == 0:
        return 0.0
    ratio, _ = follower_ratio_and_score(batch, follower_policy, params)
    w = batch.weights[batch.follower_traj]
    return float(w @ (np.abs(ratio - 1.0) > eps) / w.sum())
