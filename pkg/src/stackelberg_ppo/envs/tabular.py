"""A tiny, exactly enumerable co-design game and its enumeration oracle.

Construction of :class:`TabularCoDesignSMG` (reproducible from the seed):

* leader: 3 states, 2 actions, horizon ``T = 2``, start state 0,
  deterministic transition ``next(s, a) = (s + a) mod 3``;
* the terminal leader state *is* the morphology (3 morphologies);
* follower per morphology: 2 states, 2 actions, truncation ``H = 3``, no
  early termination;
* tables drawn from ``numpy.random.default_rng(seed)`` in this order:
  ``R^L ~ U[-1, 1]^(3x2)``, follower initial rows ``mu^F ~ Dirichlet(1, 1)``
  (one per morphology), transition rows ``P^F ~ Dirichlet(1, 1)`` with shape
  ``(3, 2, 2, 2)``, ``R^F ~ U[-1, 1]^(3x2x2)``.

The oracle enumerates all ``4 * 64`` distinguishable trajectories (the
follower state reached after the last step never affects a reward or a
score, so it is summed out).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ..advantage import AdvantageConfig, ValueFunction, compute_follower_advantages, compute_leader_advantages
from ..policies import TabularSoftmaxPolicy
from ..smg import RolloutBatch, SmgSpec, Trajectory

DEFAULT_SEED = 20240001


def _draw_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(idx, len(probs) - 1)


class TabularCoDesignSMG(SmgSpec):
    name = "tabular"
    n_leader_states = 3
    n_leader_actions = 2
    n_morphologies = 3
    n_follower_states = 2
    n_follower_actions = 2

    def __init__(self, gamma: float = 0.9, seed: int = DEFAULT_SEED, leader_horizon: int = 2,
                 follower_max_steps: int = 3):
        self.gamma = float(gamma)
        self.seed = int(seed)
        self.leader_horizon = int(leader_horizon)
        self.follower_max_steps = int(follower_max_steps)
        rng = np.random.default_rng(self.seed)
        self.leader_rewards = rng.uniform(-1.0, 1.0, (3, 2))
        self.follower_init = rng.dirichlet([1.0, 1.0], size=3)
        self.follower_trans = rng.dirichlet([1.0, 1.0], size=(3, 2, 2))
        self.follower_rewards = rng.uniform(-1.0, 1.0, (3, 2, 2))

    # leader ----------------------------------------------------------------
    def leader_initial(self, rng):
        return 0

    def leader_next(self, state: int, action: int) -> int:
        return (int(state) + int(action)) % self.n_leader_states

    def leader_transition(self, state, action, rng):
        return self.leader_next(state, action)

    def leader_reward(self, state, action):
        return float(self.leader_rewards[state, action])

    def leader_obs(self, state):
        return int(state)

    def leader_value_features(self, state, t):
        f = np.zeros(self.leader_horizon * self.n_leader_states)
        if t < self.leader_horizon:
            f[t * self.n_leader_states + int(state)] = 1.0
        return f

    def morphology(self, terminal_state):
        return int(terminal_state)

    # follower --------------------------------------------------------------
    def follower_initial(self, morphology, rng):
        return _draw_index(rng, self.follower_init[morphology])

    def follower_transition(self, state, action, morphology, rng):
        return _draw_index(rng, self.follower_trans[morphology, state, int(action)]), False

    def follower_reward(self, state, action, morphology):
        return float(self.follower_rewards[morphology, state, int(action)])

    def follower_obs(self, state, morphology):
        return int(morphology) * self.n_follower_states + int(state)

    def follower_value_features(self, state, k, morphology):
        H, S = self.follower_max_steps, self.n_follower_states
        f = np.zeros(self.n_morphologies * H * S)
        if state is not None and k < H:
            f[(int(morphology) * H + k) * S + int(state)] = 1.0
        return f

    # defaults used by the trainer ----------------------------------------
    def make_policies(self, leader_family: str = "tabular", rng=None):
        return (
            TabularSoftmaxPolicy(self.n_leader_states, self.n_leader_actions),
            TabularSoftmaxPolicy(self.n_morphologies * self.n_follower_states, self.n_follower_actions),
        )

    @property
    def leader_value_dim(self) -> int:
        return self.leader_horizon * self.n_leader_states

    @property
    def follower_value_dim(self) -> int:
        return self.n_morphologies * self.follower_max_steps * self.n_follower_states


@dataclass
class EnumerationOracle:
    """Exact expectations over every trajectory of a :class:`TabularCoDesignSMG`."""

    game: TabularCoDesignSMG

    def __post_init__(self):
        g = self.game
        self.leader_policy, self.follower_policy = g.make_policies()
        T, H = g.leader_horizon, g.follower_max_steps
        paths = []
        for acts in itertools.product(range(g.n_leader_actions), repeat=T):
            s = [0]
            for a in acts:
                s.append(g.leader_next(s[-1], a))
            paths.append((s, list(acts)))
        self.l_states = np.array([p[0] for p in paths])  # (P, T+1)
        self.l_actions = np.array([p[1] for p in paths])  # (P, T)
        self.l_morph = self.l_states[:, -1]
        # follower paths: s_0..s_{H-1}, a_0..a_{H-1}
        fp = list(itertools.product(range(g.n_follower_states), range(g.n_follower_actions), repeat=H))
        fp = np.array(fp).reshape(-1, H, 2)
        self.f_states = fp[:, :, 0]
        self.f_actions = fp[:, :, 1]
        disc = g.gamma ** np.arange(H)
        self.f_disc = disc
        m_idx = np.arange(g.n_morphologies)[:, None, None]
        self.f_rewards = g.follower_rewards[m_idx, self.f_states[None], self.f_actions[None]]  # (M, J, H)
        self.f_return = self.f_rewards @ disc  # (M, J)
        dyn = g.follower_init[np.arange(g.n_morphologies)[:, None], self.f_states[None, :, 0]]
        for k in range(H - 1):
            dyn = dyn * g.follower_trans[m_idx[:, :, 0], self.f_states[None, :, k], self.f_actions[None, :, k],
                                         self.f_states[None, :, k + 1]]
        self.f_dynamics = dyn  # (M, J)
        t_disc = g.gamma ** np.arange(T)
        self.l_return = g.leader_rewards[self.l_states[:, :T], self.l_actions] @ t_disc  # (P,)

    # probability tables ---------------------------------------------------
    def leader_probs(self, theta_l) -> np.ndarray:
        return self.leader_policy.probs(theta_l, np.arange(self.game.n_leader_states))

    def follower_probs(self, theta_f) -> np.ndarray:
        g = self.game
        return self.follower_policy.probs(theta_f, np.arange(g.n_morphologies * g.n_follower_states))

    def _path_probs(self, pi_l, pi_f):
        g = self.game
        T = g.leader_horizon
        p_l = np.prod(pi_l[self.l_states[:, :T], self.l_actions], axis=1)  # (P,)
        ctx = np.arange(g.n_morphologies)[:, None, None] * g.n_follower_states + self.f_states[None]
        p_f = self.f_dynamics * np.prod(pi_f[ctx, self.f_actions[None]], axis=2)  # (M, J)
        return p_l, p_f

    def objectives_from_probs(self, pi_l, pi_f) -> tuple[float, float]:
        p_l, p_f = self._path_probs(pi_l, pi_f)
        jf_m = np.sum(p_f * self.f_return, axis=1)  # (M,)
        jf = float(p_l @ jf_m[self.l_morph])
        gT = self.game.gamma ** self.game.leader_horizon
        jl = float(p_l @ (self.l_return + gT * jf_m[self.l_morph]))
        return jl, jf

    def enumerate_objectives(self, theta_l, theta_f) -> tuple[float, float]:
        return self.objectives_from_probs(self.leader_probs(theta_l), self.follower_probs(theta_f))

    # score sums -----------------------------------------------------------
    def _leader_score_sums(self, theta_l) -> np.ndarray:
        T = self.game.leader_horizon
        obs = self.l_states[:, :T].ravel()
        s = self.leader_policy.score(theta_l, obs, self.l_actions.ravel())
        return s.reshape(len(self.l_states), T, -1).sum(axis=1)

    def _follower_score_sums(self, theta_f) -> np.ndarray:
        g = self.game
        M, J, H = g.n_morphologies, len(self.f_states), g.follower_max_steps
        ctx = (np.arange(M)[:, None, None] * g.n_follower_states + self.f_states[None]).ravel()
        acts = np.broadcast_to(self.f_actions[None], (M, J, H)).ravel()
        s = self.follower_policy.score(theta_f, ctx, acts)
        return s.reshape(M, J, H, -1).sum(axis=2)

    def enumerate_grad(self, theta_l, theta_f, which: str) -> np.ndarray:
        """Exact gradient via the score-function identity with exact probabilities.

        ``which`` is one of ``"JL/thetaL"``, ``"JL/thetaF"``, ``"JF/thetaF"``.
        """
        p_l, p_f = self._path_probs(self.leader_probs(theta_l), self.follower_probs(theta_f))
        gT = self.game.gamma ** self.game.leader_horizon
        if which == "JL/thetaL":
            jf_m = np.sum(p_f * self.f_return, axis=1)
            total = self.l_return + gT * jf_m[self.l_morph]
            return (p_l * total) @ self._leader_score_sums(theta_l)
        sf = self._follower_score_sums(theta_f)  # (M, J, dF)
        per_m = np.einsum("mj,mjd->md", p_f * self.f_return, sf)
        grad = p_l @ per_m[self.l_morph]
        if which == "JF/thetaF":
            return grad
        if which == "JL/thetaF":
            return gT * grad
        raise ValueError(f"unknown gradient selector {which!r}")

    def enumerate_cross_jvp(self, theta_l, theta_f, v, method: str = "fd", step: float = 1e-4) -> np.ndarray:
        """``(d/d thetaL)(d/d thetaF) J^F`` applied to a follower-space vector ``v``.

        ``method="fd"`` differentiates :meth:`enumerate_grad` numerically along
        each leader coordinate; ``method="exact"`` uses the double score
        identity ``E[(sum s^L)(sum s^F . v) G^F]``.
        """
        theta_l = np.asarray(theta_l, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if method == "exact":
            p_l, p_f = self._path_probs(self.leader_probs(theta_l), self.follower_probs(theta_f))
            sfv = self._follower_score_sums(theta_f) @ v  # (M, J)
            per_m = np.sum(p_f * self.f_return * sfv, axis=1)
            return (p_l * per_m[self.l_morph]) @ self._leader_score_sums(theta_l)
        out = np.zeros_like(theta_l)
        for i in range(theta_l.shape[0]):
            e = np.zeros_like(theta_l)
            e[i] = step
            up = self.enumerate_grad(theta_l + e, theta_f, "JF/thetaF") @ v
            dn = self.enumerate_grad(theta_l - e, theta_f, "JF/thetaF") @ v
            out[i] = (up - dn) / (2.0 * step)
        return out

    # exact values ---------------------------------------------------------
    def exact_values(self, theta_l, theta_f):
        """Backward recursion: ``V^F[m, k, s]`` (k = 0..H) and ``V^L[t, s]`` (t = 0..T)."""
        g = self.game
        pi_l, pi_f = self.leader_probs(theta_l), self.follower_probs(theta_f)
        M, S, H, T = g.n_morphologies, g.n_follower_states, g.follower_max_steps, g.leader_horizon
        pf = pi_f.reshape(M, S, -1)
        vf = np.zeros((M, H + 1, S))
        for k in range(H - 1, -1, -1):
            q = g.follower_rewards + g.gamma * np.einsum("msan,mn->msa", g.follower_trans, vf[:, k + 1])
            vf[:, k] = np.sum(pf * q, axis=2)
        start = np.sum(g.follower_init * vf[:, 0], axis=1)  # (M,)
        vl = np.zeros((T + 1, g.n_leader_states))
        vl[T] = start[[g.morphology(s) for s in range(g.n_leader_states)]]
        for t in range(T - 1, -1, -1):
            for s in range(g.n_leader_states):
                vl[t, s] = sum(
                    pi_l[s, a] * (g.leader_rewards[s, a] + g.gamma * vl[t + 1, g.leader_next(s, a)])
                    for a in range(g.n_leader_actions)
                )
        return vl, vf

    def exact_value_functions(self, theta_l, theta_f) -> tuple[ValueFunction, ValueFunction]:
        g = self.game
        vl, vf = self.exact_values(theta_l, theta_f)
        T, H = g.leader_horizon, g.follower_max_steps
        lvf = ValueFunction(vl[:T].ravel().copy(), g.leader_value_dim, phase="leader")
        fvf = ValueFunction(vf[:, :H, :].ravel().copy(), g.follower_value_dim, phase="follower")
        return lvf, fvf

    # complete batch -------------------------------------------------------
    def exact_batch(self, theta_l, theta_f, with_advantages: bool = True) -> RolloutBatch:
        """Every trajectory once, weighted by its exact probability.

        Advantages come from GAE with ``lambda = 1`` against the exact value
        functions, i.e. reward-to-go minus a fixed baseline, which keeps every
        score-function estimator (first and second order) unbiased.
        """
        g = self.game
        theta_l = np.asarray(theta_l, dtype=np.float64)
        theta_f = np.asarray(theta_f, dtype=np.float64)
        pi_l, pi_f = self.leader_probs(theta_l), self.follower_probs(theta_f)
        p_l, p_f = self._path_probs(pi_l, pi_f)
        T, H = g.leader_horizon, g.follower_max_steps
        trajs, weights = [], []
        for pi in range(len(self.l_states)):
            ls, la = self.l_states[pi], self.l_actions[pi]
            m = int(self.l_morph[pi])
            l_obs = ls[:T].astype(np.int64)
            l_lp = np.log(pi_l[ls[:T], la])
            l_feat = np.array([g.leader_value_features(ls[t], t) for t in range(T)])
            for j in range(len(self.f_states)):
                w = p_l[pi] * p_f[m, j]
                fs, fa = self.f_states[j], self.f_actions[j]
                f_obs = np.array([g.follower_obs(s, m) for s in fs], dtype=np.int64)
                trajs.append(
                    Trajectory(
                        leader_states=list(ls),
                        leader_obs=l_obs,
                        leader_actions=la.astype(np.int64),
                        leader_rewards=g.leader_rewards[ls[:T], la].astype(np.float64),
                        leader_logp=l_lp,
                        leader_masks=None,
                        leader_value_features=l_feat,
                        terminal_morphology=m,
                        follower_states=list(fs) + [None],
                        follower_obs=f_obs,
                        follower_actions=fa.astype(np.int64),
                        follower_rewards=self.f_rewards[m, j].copy(),
                        follower_logp=np.log(pi_f[f_obs, fa]),
                        follower_value_features=np.array([g.follower_value_features(fs[k], k, m) for k in range(H)]),
                        follower_final_value_features=g.follower_value_features(None, H, m),
                        truncated=True,
                    )
                )
                weights.append(w)
        batch = RolloutBatch.from_trajectories(trajs, theta_l, theta_f, g.gamma, weights=np.array(weights))
        if not with_advantages:
            return batch
        lvf, fvf = self.exact_value_functions(theta_l, theta_f)
        cfg = AdvantageConfig(gamma=g.gamma, gae_lambda=1.0, normalize=False)
        batch = compute_follower_advantages(batch, fvf, cfg)
        return compute_leader_advantages(batch, lvf, cfg)

    # Fisher / KL ----------------------------------------------------------
    def follower_visitation(self, theta_l, theta_f) -> np.ndarray:
        """``d[m, k, s]``: probability the follower is in state ``s`` at step ``k`` of morphology ``m``."""
        g = self.game
        M, S, H = g.n_morphologies, g.n_follower_states, g.follower_max_steps
        pi_l, pi_f = self.leader_probs(theta_l), self.follower_probs(theta_f)
        p_l, _ = self._path_probs(pi_l, pi_f)
        p_m = np.bincount(self.l_morph, weights=p_l, minlength=M)
        pf = pi_f.reshape(M, S, -1)
        d = np.zeros((M, H, S))
        d[:, 0] = p_m[:, None] * g.follower_init
        for k in range(H - 1):
            d[:, k + 1] = np.einsum("ms,msa,msan->mn", d[:, k], pf, g.follower_trans)
        return d

    def dense_fisher(self, theta_l, theta_f) -> np.ndarray:
        """Visitation-averaged follower Fisher matrix assembled block by block."""
        g = self.game
        d = self.follower_visitation(theta_l, theta_f)
        pi_f = self.follower_probs(theta_f)
        dim = self.follower_policy.param_dim
        A = g.n_follower_actions
        F = np.zeros((dim, dim))
        occ = d.sum(axis=1)  # (M, S)
        for m in range(g.n_morphologies):
            for s in range(g.n_follower_states):
                c = m * g.n_follower_states + s
                p = pi_f[c]
                sl = slice(c * A, (c + 1) * A)
                F[sl, sl] += occ[m, s] * (np.diag(p) - np.outer(p, p))
        return F / d.sum()

    def kl_surrogate(self, theta_l, theta_f_old, theta_f) -> float:
        """Visitation-averaged ``KL(pi_theta || pi_old)`` with states drawn under ``theta_old``."""
        g = self.game
        d = self.follower_visitation(theta_l, theta_f_old)
        occ = d.sum(axis=1).ravel()
        kl = self.follower_policy.kl(theta_f, theta_f_old, np.arange(g.n_morphologies * g.n_follower_states))
        return float(occ @ kl / d.sum())

    # brute force optimum --------------------------------------------------
    def brute_force_optimum(self):
        """Best leader objective over deterministic policy pairs, follower best-responding.

        Returns ``(J^L*, leader_actions, follower_actions)`` with per-state
        action choices.
        """
        g = self.game
        S_l, A_l = g.n_leader_states, g.n_leader_actions
        C_f, A_f = g.n_morphologies * g.n_follower_states, g.n_follower_actions
        best = (-np.inf, None, None)
        for lead in itertools.product(range(A_l), repeat=S_l):
            pi_l = np.eye(A_l)[list(lead)]
            f_choice = []
            for m in range(g.n_morphologies):
                best_m, arg_m = -np.inf, None
                for fol in itertools.product(range(A_f), repeat=g.n_follower_states):
                    pi_f = np.full((C_f, A_f), 1.0 / A_f)
                    for s, a in enumerate(fol):
                        pi_f[m * g.n_follower_states + s] = np.eye(A_f)[a]
                    _, p_f = self._path_probs(pi_l, pi_f)
                    jf_m = float(np.sum(p_f[m] * self.f_return[m]))
                    if jf_m > best_m + 1e-15:
                        best_m, arg_m = jf_m, fol
                f_choice.append(arg_m)
            pi_f = np.vstack([np.eye(A_f)[list(f_choice[m])] for m in range(g.n_morphologies)])
            jl, _ = self.objectives_from_probs(pi_l, pi_f)
            if jl > best[0]:
                best = (jl, lead, tuple(f_choice))
        return best
