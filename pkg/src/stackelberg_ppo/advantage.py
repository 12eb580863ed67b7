"""Value baselines and GAE for both phases of a rollout batch."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import NumericsError
from .numerics import AdamState, adam_step
from .smg import RolloutBatch


@dataclass(frozen=True)
class AdvantageConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    normalize: bool = True

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")


@dataclass(frozen=True)
class ValueFunction:
    """State-value baseline, linear in env-supplied features or a 1-hidden-layer net.

    The linear family has no implicit intercept unless ``bias=True``;
    environments decide what constant-like features to expose so that values
    vanish at the truncation horizon.
    """

    params: np.ndarray
    feature_dim: int
    phase: str = "follower"
    family: str = "linear"
    hidden: int = 32
    bias: bool = False
    adam: AdamState | None = field(default=None, compare=False)

    @classmethod
    def create(cls, feature_dim: int, phase: str, family: str = "linear", hidden: int = 32,
               bias: bool = False, rng: np.random.Generator | None = None) -> "ValueFunction":
        if phase not in ("leader", "follower"):
            raise ValueError(f"unknown phase {phase!r}")
        if family == "linear":
            params = np.zeros(feature_dim + (1 if bias else 0))
        elif family == "mlp":
            rng = rng if rng is not None else np.random.default_rng(0)
            w1 = rng.normal(0.0, 1.0 / math.sqrt(feature_dim), (hidden, feature_dim))
            params = np.concatenate([w1.ravel(), np.zeros(hidden), np.zeros(hidden), np.zeros(1)])
        else:
            raise ValueError(f"unknown value family {family!r}")
        return cls(params, feature_dim, phase, family, hidden, bias)

    def _mlp_parts(self):
        h, f = self.hidden, self.feature_dim
        p = self.params
        return p[: h * f].reshape(h, f), p[h * f : h * f + h], p[h * f + h : h * f + 2 * h], p[-1]

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        if self.family == "linear":
            out = x @ self.params[: self.feature_dim]
            if self.bias:
                out = out + self.params[-1]
            return out
        w1, b1, w2, b2 = self._mlp_parts()
        return np.tanh(x @ w1.T + b1) @ w2 + b2

    def loss_and_grad(self, features, targets) -> tuple[float, np.ndarray]:
        x = np.asarray(features, dtype=np.float64).reshape(-1, self.feature_dim)
        y = np.asarray(targets, dtype=np.float64)
        n = max(x.shape[0], 1)
        if self.family == "linear":
            err = self.predict(x) - y
            grad = 2.0 * (x.T @ err) / n
            if self.bias:
                grad = np.append(grad, 2.0 * err.sum() / n)
            return float(np.mean(err * err)), grad
        w1, b1, w2, b2 = self._mlp_parts()
        h = np.tanh(x @ w1.T + b1)
        err = h @ w2 + b2 - y
        g_out = 2.0 * err / n
        dpre = np.outer(g_out, w2) * (1.0 - h * h)
        grad = np.concatenate([(dpre.T @ x).ravel(), dpre.sum(0), h.T @ g_out, [g_out.sum()]])
        return float(np.mean(err * err)), grad


def _features_and_targets(vf: ValueFunction, batch: RolloutBatch):
    if vf.phase == "leader":
        return batch.leader_value_features, batch.leader_returns
    return batch.follower_value_features, batch.follower_returns


def fit_value(vf: ValueFunction, batch: RolloutBatch, lr: float, epochs: int,
              return_losses: bool = False):
    """Full-batch Adam regression of ``vf`` onto the batch's empirical returns.

    The Adam moments travel with the returned value function, so repeated
    calls across training epochs continue the same optimizer.
    """
    if batch.leader_returns is None or batch.follower_returns is None:
        batch = discounted_returns(batch)
    x, y = _features_and_targets(vf, batch)
    losses = []
    if epochs <= 0 or len(y) == 0:
        return (vf, losses) if return_losses else vf
    state = vf.adam if vf.adam is not None and vf.adam.lr == lr else AdamState.zeros(vf.params.shape[0], lr)
    params = vf.params
    cur = vf
    for _ in range(epochs):
        loss, grad = cur.loss_and_grad(x, y)
        if not np.isfinite(loss):
            raise NumericsError(f"value regression loss became {loss}")
        losses.append(loss)
        state, params = adam_step(state, params, grad)
        cur = replace(cur, params=params)
    final_loss, _ = cur.loss_and_grad(x, y)
    losses.append(final_loss)
    cur = replace(cur, adam=state)
    return (cur, losses) if return_losses else cur


def discounted_returns(batch: RolloutBatch) -> RolloutBatch:
    """Fill per-step Monte Carlo reward-to-go targets for both phases.

    Leader targets include the ``gamma**(T - t)``-shifted follower return.
    """
    g = batch.gamma
    f_counts = batch.follower_counts
    f_ret = kernels.gae_segments(
        batch.follower_rewards, np.zeros_like(batch.follower_rewards), np.zeros(batch.n_traj), f_counts, g, 1.0
    )
    tail = _follower_tail(batch, f_ret, f_counts)
    l_ret = kernels.gae_segments(
        batch.leader_rewards,
        np.zeros_like(batch.leader_rewards),
        tail,
        np.full(batch.n_traj, batch.leader_horizon, dtype=np.int64),
        g,
        1.0,
    )
    return replace(batch, leader_returns=l_ret, follower_returns=f_ret)


def _follower_tail(batch: RolloutBatch, f_ret: np.ndarray, f_counts: np.ndarray) -> np.ndarray:
    """Discounted follower return of each trajectory (0 for an empty phase)."""
    starts = np.concatenate([[0], np.cumsum(f_counts)[:-1]])
    tail = np.zeros(batch.n_traj)
    has = f_counts > 0
    tail[has] = f_ret[starts[has]]
    return tail


def normalize(adv: np.ndarray) -> np.ndarray:
    if adv.size == 0:
        return adv
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def compute_follower_advantages(batch: RolloutBatch, vf: ValueFunction, cfg: AdvantageConfig) -> RolloutBatch:
    """GAE over each trajectory's follower steps.

    Terminated phases bootstrap with 0, truncated ones with ``V(s_H)``.
    """
    if vf.phase != "follower":
        raise ValueError("compute_follower_advantages needs a follower value function")
    if batch.follower_returns is None or batch.leader_returns is None:
        batch = discounted_returns(batch)
    values = vf.predict(batch.follower_value_features) if len(batch.follower_rewards) else np.zeros(0)
    boot = np.where(batch.follower_truncated, vf.predict(batch.follower_final_value_features), 0.0)
    adv = kernels.gae_segments(batch.follower_rewards, values, boot, batch.follower_counts, cfg.gamma, cfg.gae_lambda)
    if cfg.normalize:
        adv = normalize(adv)
    return replace(batch, follower_advantages=adv)


def compute_leader_advantages(batch: RolloutBatch, vf: ValueFunction, cfg: AdvantageConfig) -> RolloutBatch:
    """GAE over the leader steps with the realized follower return as terminal value.

    The follower return enters at step ``T`` the way a bootstrap value would,
    so the leader advantage reflects the edit rewards and the
    ``gamma**T``-weighted follower tail.
    """
    if vf.phase != "leader":
        raise ValueError("compute_leader_advantages needs a leader value function")
    if batch.follower_returns is None or batch.leader_returns is None:
        batch = discounted_returns(batch)
    tail = _follower_tail(batch, batch.follower_returns, batch.follower_counts)
    values = vf.predict(batch.leader_value_features)
    adv = kernels.gae_segments(
        batch.leader_rewards,
        values,
        tail,
        np.full(batch.n_traj, batch.leader_horizon, dtype=np.int64),
        cfg.gamma,
        cfg.gae_lambda,
    )
    if cfg.normalize:
        adv = normalize(adv)
    return replace(batch, leader_advantages=adv)
