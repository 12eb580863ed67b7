"""ChainWalker: a toy morphology-editing locomotion task.

The leader edits a chain of segments for ``T`` steps; the follower then
drives the resulting body as a 1-D point mass with a continuous force.

* mass ``m = sum(lengths)``, actuation gain ``g = 1 / (1 + 0.3 * n_segments)``;
* ``x' = x + dt * v``, ``v' = v + dt * g * f / m`` with ``dt = 0.05``;
* reward ``(x' - x) / dt - w * a**2`` with ``w = 1e-4`` on the raw action ``a``;
* the applied force ``f`` is ``a`` clipped to ``force_scale * n * m``: every
  segment carries a motor whose strength grows with body size.

A weak controller moves light bodies fastest, while a controller that pushes
hard enough to saturate its motors moves long multi-segment bodies fastest.
Which morphology is best therefore depends on the follower's competence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..policies import LinearGaussianPolicy, TabularSoftmaxPolicy
from ..smg import FollowerPhase, SmgSpec

LENGTHS = (0.5, 1.0, 1.5)
MAX_SEGMENTS = 4
ADD, LENGTHEN, SHORTEN, NOOP = range(4)
ACTION_NAMES = ("add-segment", "lengthen-last", "shorten-last", "no-op")


def all_morphologies(max_segments: int = MAX_SEGMENTS) -> list[tuple[float, ...]]:
    out = []
    for n in range(1, max_segments + 1):
        out.extend(itertools.product(LENGTHS, repeat=n))
    return out


@dataclass(frozen=True)
class FollowerState:
    x: float
    v: float


class ChainWalkerEnv(SmgSpec):
    name = "chainwalker"
    n_leader_actions = 4

    def __init__(
        self,
        gamma: float = 0.995,
        leader_horizon: int = 5,
        follower_max_steps: int = 100,
        dt: float = 0.05,
        effort_weight: float = 1e-4,
        force_scale: float = 1.0,
        add_cost: float = 0.01,
        new_segment_length: float = 1.0,
        initial_morphology: tuple = (1.0,),
    ):
        if new_segment_length not in LENGTHS:
            raise ValueError(f"new_segment_length must be one of {LENGTHS}")
        self.gamma = float(gamma)
        self.leader_horizon = int(leader_horizon)
        self.follower_max_steps = int(follower_max_steps)
        self.dt = float(dt)
        self.effort_weight = float(effort_weight)
        self.force_scale = float(force_scale)
        self.add_cost = float(add_cost)
        self.new_segment_length = float(new_segment_length)
        self.initial_morphology = tuple(float(x) for x in initial_morphology)
        self.morphologies = all_morphologies()
        self._index = {m: i for i, m in enumerate(self.morphologies)}
        if self.initial_morphology not in self._index:
            raise ValueError(f"invalid initial morphology {initial_morphology}")

    # body physics ---------------------------------------------------------
    @staticmethod
    def mass(morph) -> float:
        return float(sum(morph))

    @staticmethod
    def gain(morph) -> float:
        return 1.0 / (1.0 + 0.3 * len(morph))

    def force_limit(self, morph) -> float:
        return self.force_scale * len(morph) * self.mass(morph)

    @staticmethod
    def morph_features(morph) -> np.ndarray:
        return np.array([len(morph) / MAX_SEGMENTS, sum(morph) / (1.5 * MAX_SEGMENTS)])

    # leader ---------------------------------------------------------------
    def morph_index(self, morph) -> int:
        return self._index[tuple(morph)]

    @property
    def n_leader_contexts(self) -> int:
        return len(self.morphologies)

    def valid_actions(self, morph) -> np.ndarray:
        last = morph[-1]
        return np.array([len(morph) < MAX_SEGMENTS, last < LENGTHS[-1], last > LENGTHS[0], True])

    def apply_edit(self, morph, action: int) -> tuple:
        morph = tuple(morph)
        if not self.valid_actions(morph)[action]:
            raise ValueError(f"{ACTION_NAMES[action]} is invalid for {morph}")
        if action == ADD:
            return morph + (self.new_segment_length,)
        if action in (LENGTHEN, SHORTEN):
            i = LENGTHS.index(morph[-1]) + (1 if action == LENGTHEN else -1)
            return morph[:-1] + (LENGTHS[i],)
        return morph

    def leader_initial(self, rng):
        return self.initial_morphology

    def leader_transition(self, state, action, rng):
        return self.apply_edit(state, int(action))

    def leader_reward(self, state, action):
        return -self.add_cost if int(action) == ADD else 0.0

    def leader_mask(self, state):
        return self.valid_actions(state)

    def leader_obs(self, state):
        return self.morph_index(state)

    @property
    def leader_value_dim(self) -> int:
        return 3 * self.leader_horizon

    def leader_value_features(self, state, t):
        f = np.zeros(self.leader_value_dim)
        if t < self.leader_horizon:
            f[3 * t : 3 * t + 3] = np.concatenate([[1.0], self.morph_features(state)])
        return f

    def morphology(self, terminal_state):
        return tuple(terminal_state)

    # follower -------------------------------------------------------------
    def follower_initial(self, morphology, rng):
        return FollowerState(0.0, 0.0)

    def follower_transition(self, state, action, morphology, rng):
        a = float(np.ravel(action)[0])
        lim = self.force_limit(morphology)
        f = min(max(a, -lim), lim)
        v = state.v + self.dt * self.gain(morphology) * f / self.mass(morphology)
        return FollowerState(state.x + self.dt * state.v, v), False

    def follower_reward(self, state, action, morphology):
        a = float(np.ravel(action)[0])
        return state.v - self.effort_weight * a * a

    def follower_obs(self, state, morphology):
        return np.concatenate([[state.v], self.morph_features(morphology)])

    @property
    def follower_obs_dim(self) -> int:
        return 3

    @property
    def follower_value_dim(self) -> int:
        return 5

    def _value_features(self, v: np.ndarray, k: np.ndarray, morphology) -> np.ndarray:
        ttg = (self.follower_max_steps - k) / self.follower_max_steps
        mf = self.morph_features(morphology)
        cols = [ttg, ttg * ttg, ttg * v, ttg * mf[0], ttg * mf[1]]
        return np.stack([np.broadcast_to(c, np.shape(v)) for c in cols], axis=-1).astype(np.float64)

    def follower_value_features(self, state, k, morphology):
        return self._value_features(np.float64(state.v), np.float64(k), morphology)

    def run_follower_phase(self, policy, params, morphology, rng) -> FollowerPhase:
        """Compiled rollout; consumes the stream exactly like the generic loop."""
        if not isinstance(policy, LinearGaussianPolicy) or policy.action_dim != 1:
            return super().run_follower_phase(policy, params, morphology, rng)
        w, b, log_std = policy.unpack(params)
        H = self.follower_max_steps
        noise = rng.standard_normal(H)
        mf = self.morph_features(morphology)
        xs, vs, acts, rews, lps = kernels.chainwalker_rollout(
            w[0], float(b[0]), float(log_std[0]), mf, self.mass(morphology), self.gain(morphology), noise,
            self.dt, self.effort_weight, self.force_limit(morphology),
        )
        obs = np.column_stack([vs[:H], np.broadcast_to(mf, (H, mf.shape[0]))])
        feats = self._value_features(vs[:H], np.arange(H, dtype=np.float64), morphology)
        return FollowerPhase(
            states=[FollowerState(float(x), float(v)) for x, v in zip(xs, vs)],
            obs=obs,
            actions=acts.reshape(H, 1),
            rewards=rews,
            logp=lps,
            value_features=feats,
            final_value_features=np.zeros(self.follower_value_dim),
            truncated=True,
        )

    def make_policies(self, leader_family: str = "tabular", rng=None):
        return (
            TabularSoftmaxPolicy(self.n_leader_contexts, self.n_leader_actions),
            LinearGaussianPolicy(self.follower_obs_dim, 1),
        )
