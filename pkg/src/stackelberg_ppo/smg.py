"""Phase-separated Stackelberg Markov games and two-phase rollout collection.

A trajectory is sampled in two phases: the leader edits the morphology for
exactly ``T`` steps, the morphology is frozen at the leader's terminal
state, then the follower controls that fixed body until termination or the
truncation horizon ``H``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DimensionError, EnvError
from .policies import PolicyFamily


@dataclass(frozen=True)
class FollowerPhase:
    """Raw record of one follower phase (before stacking into a batch)."""

    states: list
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logp: np.ndarray
    value_features: np.ndarray
    final_value_features: np.ndarray
    truncated: bool


class SmgSpec(ABC):
    """Contract every phase-separated game implements.

    Subclasses set ``leader_horizon`` (T), ``follower_max_steps`` (H) and
    ``gamma``, and provide the transition/reward/observation hooks below.
    Morphology encodings are opaque here; the follower hooks receive the
    frozen terminal morphology on every call.
    """

    name: str = "smg"
    leader_horizon: int
    follower_max_steps: int
    gamma: float

    # -- leader phase -------------------------------------------------------
    @abstractmethod
    def leader_initial(self, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def leader_transition(self, state, action, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def leader_reward(self, state, action) -> float: ...

    def leader_mask(self, state) -> np.ndarray | None:
        return None

    @abstractmethod
    def leader_obs(self, state): ...

    @abstractmethod
    def leader_value_features(self, state, t: int) -> np.ndarray: ...

    @abstractmethod
    def morphology(self, terminal_state) -> Any: ...

    # -- follower phase -----------------------------------------------------
    @abstractmethod
    def follower_initial(self, morphology, rng: np.random.Generator) -> Any: ...

    @abstractmethod
    def follower_transition(self, state, action, morphology, rng: np.random.Generator) -> tuple[Any, bool]: ...

    @abstractmethod
    def follower_reward(self, state, action, morphology) -> float: ...

    @abstractmethod
    def follower_obs(self, state, morphology): ...

    @abstractmethod
    def follower_value_features(self, state, k: int, morphology) -> np.ndarray:
        """Value-function features; must be all-zero at ``k == follower_max_steps``."""

    def run_follower_phase(self, policy: PolicyFamily, params, morphology, rng) -> FollowerPhase:
        """Step the follower until done or ``H`` steps.

        Environments may override this with a compiled kernel as long as the
        random stream is consumed identically.
        """
        state = self.follower_initial(morphology, rng)
        states, obs_l, acts, rews, lps, feats = [state], [], [], [], [], []
        done = False
        for k in range(self.follower_max_steps):
            obs = self.follower_obs(state, morphology)
            action, lp = policy.sample(params, obs, rng)
            reward = float(self.follower_reward(state, action, morphology))
            feats.append(self.follower_value_features(state, k, morphology))
            state, done = self.follower_transition(state, action, morphology, rng)
            obs_l.append(obs)
            acts.append(action)
            rews.append(reward)
            lps.append(lp)
            states.append(state)
            if done:
                break
        n = len(rews)
        return FollowerPhase(
            states=states,
            obs=np.asarray(obs_l),
            actions=np.asarray(acts),
            rewards=np.asarray(rews, dtype=np.float64),
            logp=np.asarray(lps, dtype=np.float64),
            value_features=np.asarray(feats, dtype=np.float64),
            final_value_features=np.asarray(self.follower_value_features(state, n, morphology), dtype=np.float64),
            truncated=not done,
        )


@dataclass(frozen=True)
class Trajectory:
    leader_states: list
    leader_obs: np.ndarray
    leader_actions: np.ndarray
    leader_rewards: np.ndarray
    leader_logp: np.ndarray
    leader_masks: np.ndarray | None
    leader_value_features: np.ndarray
    terminal_morphology: Any
    follower_states: list
    follower_obs: np.ndarray
    follower_actions: np.ndarray
    follower_rewards: np.ndarray
    follower_logp: np.ndarray
    follower_value_features: np.ndarray
    follower_final_value_features: np.ndarray
    truncated: bool

    @property
    def leader_steps(self):
        return list(zip(self.leader_states[:-1], self.leader_actions, self.leader_rewards, self.leader_logp))

    @property
    def follower_steps(self):
        return list(zip(self.follower_states[:-1], self.follower_actions, self.follower_rewards, self.follower_logp))


def leader_objective_return(traj: Trajectory, gamma: float) -> float:
    """Discounted leader return: edit rewards plus the follower tail shifted by ``gamma**T``."""
    total = 0.0
    disc = 1.0
    for r in traj.leader_rewards:
        total += disc * r
        disc *= gamma
    return total + disc * follower_objective_return(traj, gamma)


def follower_objective_return(traj: Trajectory, gamma: float) -> float:
    total = 0.0
    disc = 1.0
    for r in traj.follower_rewards:
        total += disc * r
        disc *= gamma
    return total


@dataclass(frozen=True)
class RolloutBatch:
    """Trajectories collected under frozen behavior parameters, stacked per step.

    ``weights`` holds one non-negative weight per trajectory summing to one;
    sampled batches use ``1/N``.  The enumeration oracle builds batches that
    cover every trajectory with its exact probability as weight, which turns
    every estimator below into an exact expectation.
    """

    trajectories: tuple
    behavior_leader_params: np.ndarray
    behavior_follower_params: np.ndarray
    gamma: float
    leader_horizon: int
    weights: np.ndarray
    leader_obs: np.ndarray
    leader_actions: np.ndarray
    leader_rewards: np.ndarray
    leader_logp: np.ndarray
    leader_masks: np.ndarray | None
    leader_value_features: np.ndarray
    leader_traj: np.ndarray
    leader_t: np.ndarray
    follower_obs: np.ndarray
    follower_actions: np.ndarray
    follower_rewards: np.ndarray
    follower_logp: np.ndarray
    follower_value_features: np.ndarray
    follower_traj: np.ndarray
    follower_k: np.ndarray
    follower_final_value_features: np.ndarray
    follower_truncated: np.ndarray
    leader_advantages: np.ndarray | None = None
    follower_advantages: np.ndarray | None = None
    leader_returns: np.ndarray | None = None
    follower_returns: np.ndarray | None = None
    seed_info: tuple = field(default=())

    @classmethod
    def from_trajectories(
        cls,
        trajectories,
        behavior_leader_params,
        behavior_follower_params,
        gamma: float,
        weights=None,
        seed_info: tuple = (),
    ) -> "RolloutBatch":
        trajs = tuple(trajectories)
        if not trajs:
            raise ValueError("a batch needs at least one trajectory")
        n = len(trajs)
        T = len(trajs[0].leader_actions)
        if weights is None:
            weights = np.full(n, 1.0 / n)
        weights = np.asarray(weights, dtype=np.float64)
        f_counts = np.array([len(tr.follower_rewards) for tr in trajs], dtype=np.int64)
        f_traj = np.repeat(np.arange(n), f_counts)
        f_k = np.concatenate([np.arange(c) for c in f_counts]) if f_counts.sum() else np.zeros(0, np.int64)

        def cat(name):
            parts = [getattr(tr, name) for tr in trajs if len(getattr(tr, name))]
            return np.concatenate(parts, axis=0) if parts else np.zeros(0)

        masks = None
        if trajs[0].leader_masks is not None:
            masks = np.concatenate([tr.leader_masks for tr in trajs], axis=0)
        return cls(
            trajectories=trajs,
            behavior_leader_params=np.array(behavior_leader_params, dtype=np.float64),
            behavior_follower_params=np.array(behavior_follower_params, dtype=np.float64),
            gamma=float(gamma),
            leader_horizon=T,
            weights=weights,
            leader_obs=np.concatenate([tr.leader_obs for tr in trajs], axis=0),
            leader_actions=np.concatenate([tr.leader_actions for tr in trajs], axis=0),
            leader_rewards=np.concatenate([tr.leader_rewards for tr in trajs]),
            leader_logp=np.concatenate([tr.leader_logp for tr in trajs]),
            leader_masks=masks,
            leader_value_features=np.concatenate([tr.leader_value_features for tr in trajs], axis=0),
            leader_traj=np.repeat(np.arange(n), T),
            leader_t=np.tile(np.arange(T), n),
            follower_obs=cat("follower_obs"),
            follower_actions=cat("follower_actions"),
            follower_rewards=cat("follower_rewards"),
            follower_logp=cat("follower_logp"),
            follower_value_features=cat("follower_value_features"),
            follower_traj=f_traj,
            follower_k=f_k,
            follower_final_value_features=np.stack([tr.follower_final_value_features for tr in trajs]),
            follower_truncated=np.array([tr.truncated for tr in trajs], dtype=bool),
            seed_info=tuple(seed_info),
        )

    @property
    def n_traj(self) -> int:
        return len(self.trajectories)

    @property
    def follower_counts(self) -> np.ndarray:
        return np.bincount(self.follower_traj, minlength=self.n_traj)

    @property
    def leader_step_weights(self) -> np.ndarray:
        """Trajectory weight times ``gamma**t`` for every leader step."""
        return self.weights[self.leader_traj] * self.gamma ** self.leader_t

    @property
    def follower_step_weights(self) -> np.ndarray:
        """Trajectory weight times ``gamma**k`` for every follower step."""
        return self.weights[self.follower_traj] * self.gamma ** self.follower_k

    @property
    def env_steps(self) -> int:
        return int(self.leader_actions.shape[0] + self.follower_rewards.shape[0])

    def leader_returns_per_traj(self) -> np.ndarray:
        return np.array([leader_objective_return(tr, self.gamma) for tr in self.trajectories])

    def follower_returns_per_traj(self) -> np.ndarray:
        return np.array([follower_objective_return(tr, self.gamma) for tr in self.trajectories])


def sample_trajectory(env: SmgSpec, leader_policy, leader_params, follower_policy, follower_params, rng) -> Trajectory:
    state = env.leader_initial(rng)
    states, obs_l, acts, rews, lps, masks, feats = [state], [], [], [], [], [], []
    for t in range(env.leader_horizon):
        mask = env.leader_mask(state)
        obs = env.leader_obs(state)
        action, lp = leader_policy.sample(leader_params, obs, rng, mask)
        reward = float(env.leader_reward(state, action))
        if not np.isfinite(reward):
            raise EnvError(f"leader reward {reward} at t={t}")
        feats.append(env.leader_value_features(state, t))
        state = env.leader_transition(state, action, rng)
        obs_l.append(obs)
        acts.append(action)
        rews.append(reward)
        lps.append(lp)
        masks.append(mask)
        states.append(state)
    morph = env.morphology(state)
    fp = env.run_follower_phase(follower_policy, follower_params, morph, rng)
    if not np.all(np.isfinite(fp.rewards)):
        raise EnvError("follower phase produced a non-finite reward")
    return Trajectory(
        leader_states=states,
        leader_obs=np.asarray(obs_l),
        leader_actions=np.asarray(acts, dtype=np.int64),
        leader_rewards=np.asarray(rews, dtype=np.float64),
        leader_logp=np.asarray(lps, dtype=np.float64),
        leader_masks=None if masks[0] is None else np.asarray(masks, dtype=bool),
        leader_value_features=np.asarray(feats, dtype=np.float64),
        terminal_morphology=morph,
        follower_states=fp.states,
        follower_obs=fp.obs,
        follower_actions=fp.actions,
        follower_rewards=fp.rewards,
        follower_logp=fp.logp,
        follower_value_features=fp.value_features,
        follower_final_value_features=fp.final_value_features,
        truncated=fp.truncated,
    )


def collect_rollouts(
    env: SmgSpec,
    leader_policy: PolicyFamily,
    leader_params,
    follower_policy: PolicyFamily,
    follower_params,
    n_traj: int,
    rng: np.random.Generator,
) -> RolloutBatch:
    """Sample ``n_traj`` independent two-phase trajectories.

    Each trajectory draws from its own child stream spawned from ``rng``, so
    the batch does not depend on the order trajectories are simulated in.
    Advantages are left empty.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    leader_params = np.asarray(leader_params, dtype=np.float64)
    follower_params = np.asarray(follower_params, dtype=np.float64)
    if leader_params.shape != (leader_policy.param_dim,) or follower_params.shape != (follower_policy.param_dim,):
        raise DimensionError("policy parameter dims do not match their families")
    streams = rng.spawn(n_traj)
    trajs = [
        sample_trajectory(env, leader_policy, leader_params, follower_policy, follower_params, s)
        for s in streams
    ]
    return RolloutBatch.from_trajectories(trajs, leader_params, follower_params, env.gamma)
