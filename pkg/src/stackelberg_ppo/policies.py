"""Differentiable policy families with closed-form scores.

Every family works on batches: ``obs`` stacks one observation per row and
``actions`` holds the matching actions.  Conditioning on the terminal
morphology is the environment's job: it folds the morphology into the
observation (a separate table row for tabular policies, appended features
for function approximators).

Discrete families accept an optional boolean ``mask`` of shape
``(M, n_actions)``; invalid actions get a logit of ``-inf``.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

from .errors import DimensionError, UnsupportedError

LOG_2PI = math.log(2.0 * math.pi)


def _check_params(family: "PolicyFamily", params) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != family.param_dim:
        raise DimensionError(
            f"{type(family).__name__} expects {family.param_dim} params, got shape {params.shape}"
        )
    return params


class PolicyFamily(ABC):
    """Common interface of all policy parameterizations."""

    param_dim: int
    supports_logp_hvp: bool = False
    discrete: bool = True

    @abstractmethod
    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray: ...

    @abstractmethod
    def logp(self, params, obs, actions, mask=None) -> np.ndarray: ...

    @abstractmethod
    def score(self, params, obs, actions, mask=None) -> np.ndarray:
        """Per-row gradient of ``logp`` w.r.t. ``params``; shape ``(M, param_dim)``."""

    def logp_hvp(self, params, obs, actions, v, mask=None) -> np.ndarray:
        """Per-row Hessian-vector product of ``logp``; shape ``(M, param_dim)``."""
        raise UnsupportedError(f"{type(self).__name__} has no analytic log-prob Hessian")

    @abstractmethod
    def kl(self, params_new, params_old, obs, mask=None) -> np.ndarray:
        """Per-row ``KL(pi_new(.|s) || pi_old(.|s))``."""

    @abstractmethod
    def sample(self, params, obs, rng: np.random.Generator, mask=None):
        """Draw one action for a single observation; returns ``(action, logp)``."""


class _SoftmaxFamily(PolicyFamily):
    n_actions: int

    @abstractmethod
    def logits(self, params, obs, mask=None) -> np.ndarray: ...

    def log_probs(self, params, obs, mask=None) -> np.ndarray:
        z = self.logits(params, obs, mask)
        zmax = np.max(z, axis=1, keepdims=True)
        lse = zmax + np.log(np.sum(np.exp(z - zmax), axis=1, keepdims=True))
        return z - lse

    def probs(self, params, obs, mask=None) -> np.ndarray:
        return np.exp(self.log_probs(params, obs, mask))

    def _apply_mask(self, z, mask):
        if mask is None:
            return z
        mask = np.asarray(mask, dtype=bool).reshape(z.shape)
        return np.where(mask, z, -np.inf)

    def logp(self, params, obs, actions, mask=None):
        lp = self.log_probs(params, obs, mask)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        return lp[np.arange(lp.shape[0]), actions]

    def _logit_grad(self, params, obs, actions, mask):
        """d logp / d logits, i.e. onehot(a) - p, per row."""
        p = self.probs(params, obs, mask)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        g = -p
        g[np.arange(p.shape[0]), actions] += 1.0
        return g, p

    def kl(self, params_new, params_old, obs, mask=None):
        lp_new = self.log_probs(params_new, obs, mask)
        lp_old = self.log_probs(params_old, obs, mask)
        p_new = np.exp(lp_new)
        with np.errstate(invalid="ignore"):
            diff = np.where(p_new > 0.0, lp_new - lp_old, 0.0)
        return np.maximum(np.sum(p_new * diff, axis=1), 0.0)

    def sample(self, params, obs, rng, mask=None):
        obs_b = np.asarray(obs)[None, ...]
        mask_b = None if mask is None else np.asarray(mask, dtype=bool)[None, :]
        lp = self.log_probs(params, obs_b, mask_b)[0]
        cdf = np.cumsum(np.exp(lp))
        a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        a = min(a, self.n_actions - 1)
        # a draw landing exactly on a boundary must not select a masked action
        while not np.isfinite(lp[a]):
            a -= 1
        return a, float(lp[a])


class TabularSoftmaxPolicy(_SoftmaxFamily):
    """One row of logits per context (state, or morphology x state)."""

    supports_logp_hvp = True

    def __init__(self, n_contexts: int, n_actions: int):
        self.n_contexts = int(n_contexts)
        self.n_actions = int(n_actions)
        self.param_dim = self.n_contexts * self.n_actions

    def init_params(self, rng=None):
        return np.zeros(self.param_dim)

    def logits(self, params, obs, mask=None):
        table = _check_params(self, params).reshape(self.n_contexts, self.n_actions)
        obs = np.asarray(obs, dtype=np.int64).reshape(-1)
        return self._apply_mask(table[obs], mask)

    def _scatter(self, obs, rows):
        obs = np.asarray(obs, dtype=np.int64).reshape(-1)
        out = np.zeros((obs.shape[0], self.n_contexts, self.n_actions))
        out[np.arange(obs.shape[0]), obs] = rows
        return out.reshape(obs.shape[0], self.param_dim)

    def score(self, params, obs, actions, mask=None):
        g, _ = self._logit_grad(params, obs, actions, mask)
        return self._scatter(obs, g)

    def logp_hvp(self, params, obs, actions, v, mask=None):
        # Hessian of log-softmax is -(diag(p) - p p^T) on the context's row,
        # independent of the action taken.
        p = self.probs(params, obs, mask)
        obs = np.asarray(obs, dtype=np.int64).reshape(-1)
        vt = np.asarray(v, dtype=np.float64).reshape(self.n_contexts, self.n_actions)[obs]
        pv = np.sum(p * vt, axis=1, keepdims=True)
        return self._scatter(obs, -(p * vt - p * pv))


class MlpSoftmaxPolicy(_SoftmaxFamily):
    """One tanh hidden layer followed by a softmax over actions."""

    supports_logp_hvp = False

    def __init__(self, obs_dim: int, n_actions: int, hidden: int = 16, init_scale: float = 0.5):
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.hidden = int(hidden)
        self.init_scale = init_scale
        self._shapes = [
            (self.hidden, self.obs_dim),
            (self.hidden,),
            (self.n_actions, self.hidden),
            (self.n_actions,),
        ]
        self._sizes = [int(np.prod(s)) for s in self._shapes]
        self.param_dim = sum(self._sizes)

    def unpack(self, params):
        params = _check_params(self, params)
        out, i = [], 0
        for shape, size in zip(self._shapes, self._sizes):
            out.append(params[i : i + size].reshape(shape))
            i += size
        return out

    def init_params(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        w1 = rng.normal(0.0, self.init_scale / math.sqrt(self.obs_dim), self._shapes[0])
        # zero output layer: uniform initial policy
        return np.concatenate([w1.ravel(), np.zeros(self.hidden), np.zeros(self._sizes[2] + self.n_actions)])

    def _forward(self, params, obs):
        w1, b1, w2, b2 = self.unpack(params)
        x = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        h = np.tanh(x @ w1.T + b1)
        return x, h, h @ w2.T + b2, w2

    def logits(self, params, obs, mask=None):
        return self._apply_mask(self._forward(params, obs)[2], mask)

    def score(self, params, obs, actions, mask=None):
        x, h, _, w2 = self._forward(params, obs)
        g, _ = self._logit_grad(params, obs, actions, mask)
        dpre = (g @ w2) * (1.0 - h * h)
        m = x.shape[0]
        return np.concatenate(
            [
                (dpre[:, :, None] * x[:, None, :]).reshape(m, -1),
                dpre,
                (g[:, :, None] * h[:, None, :]).reshape(m, -1),
                g,
            ],
            axis=1,
        )


class LinearGaussianPolicy(PolicyFamily):
    """Diagonal Gaussian with mean ``W obs + b`` and a state-independent log-std.

    Parameter layout: ``W`` (row-major, ``action_dim x obs_dim``), ``b``, ``log_std``.
    """

    supports_logp_hvp = True
    discrete = False

    def __init__(self, obs_dim: int, action_dim: int = 1, init_log_std: float = 0.0):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.init_log_std = float(init_log_std)
        self.param_dim = self.action_dim * (self.obs_dim + 2)

    def unpack(self, params):
        params = _check_params(self, params)
        a, f = self.action_dim, self.obs_dim
        w = params[: a * f].reshape(a, f)
        b = params[a * f : a * f + a]
        log_std = params[a * f + a :]
        return w, b, log_std

    def pack(self, w, b, log_std):
        return np.concatenate([np.ravel(w), np.ravel(b), np.ravel(log_std)]).astype(np.float64)

    def init_params(self, rng=None):
        return self.pack(
            np.zeros((self.action_dim, self.obs_dim)),
            np.zeros(self.action_dim),
            np.full(self.action_dim, self.init_log_std),
        )

    def mean(self, params, obs):
        w, b, _ = self.unpack(params)
        x = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        return x @ w.T + b

    def _z(self, params, obs, actions):
        w, b, log_std = self.unpack(params)
        x = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        a = np.asarray(actions, dtype=np.float64).reshape(-1, self.action_dim)
        std = np.exp(log_std)
        return x, (a - (x @ w.T + b)) / std, std, log_std

    def logp(self, params, obs, actions, mask=None):
        _, z, _, log_std = self._z(params, obs, actions)
        return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=1)

    def score(self, params, obs, actions, mask=None):
        x, z, std, _ = self._z(params, obs, actions)
        dmean = z / std
        m = x.shape[0]
        return np.concatenate(
            [(dmean[:, :, None] * x[:, None, :]).reshape(m, -1), dmean, z * z - 1.0], axis=1
        )

    def logp_hvp(self, params, obs, actions, v, mask=None):
        x, z, std, _ = self._z(params, obs, actions)
        vw, vb, vrho = self.unpack(np.asarray(v, dtype=np.float64))
        # u_d = phi . (v_W[d], v_b[d]) with phi = (x, 1)
        u = x @ vw.T + vb
        coef = -u / (std * std) - 2.0 * z / std * vrho
        out_rho = -2.0 * z / std * u - 2.0 * z * z * vrho
        m = x.shape[0]
        return np.concatenate([(coef[:, :, None] * x[:, None, :]).reshape(m, -1), coef, out_rho], axis=1)

    def kl(self, params_new, params_old, obs, mask=None):
        mu_n = self.mean(params_new, obs)
        mu_o = self.mean(params_old, obs)
        _, _, ls_n = self.unpack(params_new)
        _, _, ls_o = self.unpack(params_old)
        var_n, var_o = np.exp(2.0 * ls_n), np.exp(2.0 * ls_o)
        per_dim = ls_o - ls_n + (var_n + (mu_n - mu_o) ** 2) / (2.0 * var_o) - 0.5
        return np.maximum(np.sum(per_dim, axis=1), 0.0)

    def sample(self, params, obs, rng, mask=None):
        mu = self.mean(params, obs)[0]
        _, _, log_std = self.unpack(params)
        action = mu + np.exp(log_std) * rng.standard_normal(self.action_dim)
        return action, float(self.logp(params, obs, action[None, :])[0])
