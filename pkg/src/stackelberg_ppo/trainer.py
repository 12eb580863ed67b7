"""Stackelberg PPO training loop and the vanilla shared-objective baseline."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .advantage import (
    AdvantageConfig,
    ValueFunction,
    compute_follower_advantages,
    compute_leader_advantages,
    discounted_returns,
    fit_value,
)
from .errors import NumericsError
from .numerics import AdamState, adam_step, make_rng, norm2
from .policies import PolicyFamily
from .smg import RolloutBatch, SmgSpec, collect_rollouts
from .solver import CgConfig, CgReport, solve_response
from .surrogates import (
    ClipConfig,
    cross_jvp,
    follower_clip_fraction,
    follower_kl,
    follower_ppo_grad,
    leader_direct_grad,
    leader_grad_wrt_follower,
)

log = logging.getLogger(__name__)

MODES = ("stackelberg", "vanilla", "analytic_hessian")
ALPHA_CAP = 1.0


@dataclass(frozen=True)
class TrainConfig:
    """Every tunable of a run.

    ``ppo_clip_eps = None`` disables clipping.  ``fisher_lambda = inf`` is
    shorthand for the vanilla mode.  ``response_sign`` multiplies the
    response term in the assembled leader gradient (see
    :func:`leader_stackelberg_grad`).
    """

    env: str = "tabular"
    mode: str = "stackelberg"
    seed: int = 0
    epochs: int = 200
    batch_trajectories: int = 64
    ppo_iters: int = 10
    fisher_lambda: float = 5.0
    ppo_clip_eps: float | None = 0.2
    gamma: float = 0.995
    gae_lambda: float = 0.95
    normalize_advantages: bool = True
    leader_lr: float = 5e-5
    follower_lr: float = 5e-5
    value_lr: float = 3e-4
    value_epochs: int = 20
    max_grad_norm: float = 40.0
    cg_max_iters: int = 20
    cg_rel_tol: float = 1e-3
    norm_eps: float = 1e-8
    response_sign: int = 1
    leader_horizon: int | None = None
    follower_horizon: int | None = None
    final_window: int = 10
    log_wall_time: bool = False
    env_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.fisher_lambda >= 0.0:
            raise ValueError("fisher_lambda must be >= 0")
        ClipConfig(self.ppo_clip_eps)
        AdvantageConfig(self.gamma, self.gae_lambda)
        if self.epochs < 0 or self.batch_trajectories < 1 or self.ppo_iters < 1:
            raise ValueError("epochs >= 0, batch_trajectories >= 1 and ppo_iters >= 1 are required")
        if min(self.leader_lr, self.follower_lr, self.value_lr) <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.value_epochs < 0 or self.cg_max_iters < 1 or self.cg_rel_tol <= 0 or self.norm_eps <= 0:
            raise ValueError("invalid value_epochs, cg or norm_eps setting")
        if self.response_sign not in (1, -1):
            raise ValueError("response_sign must be +1 or -1")
        if self.final_window < 1:
            raise ValueError("final_window must be >= 1")

    @property
    def effective_mode(self) -> str:
        return "vanilla" if math.isinf(self.fisher_lambda) else self.mode

    @property
    def clip(self) -> ClipConfig:
        return ClipConfig(self.ppo_clip_eps)

    @property
    def cg(self) -> CgConfig:
        return CgConfig(self.cg_max_iters, self.cg_rel_tol, self.fisher_lambda)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass(frozen=True)
class StackelbergGradient:
    direct: np.ndarray
    response: np.ndarray
    alpha: float
    assembled: np.ndarray
    cg: CgReport | None
    response_sign: int = 1


@dataclass(frozen=True)
class LeaderStepRecord:
    epoch: int
    iteration: int
    direct_norm: float
    response_norm: float
    alpha: float
    cg_iters: int
    cg_rel_residual: float
    cg_converged: bool


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    env_steps: int
    leader_return: float
    follower_return: float
    kl: float
    clip_frac: float
    cg_iters: float
    cg_converged: float
    alpha: float
    wall_ms: float

    def as_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class TrainResult:
    metrics: list
    leader_params: np.ndarray
    follower_params: np.ndarray
    leader_steps: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)

    def final_return(self, window: int) -> float:
        if not self.metrics:
            return float("nan")
        return float(np.mean([m.leader_return for m in self.metrics[-window:]]))


def balance_alpha(direct: np.ndarray, response: np.ndarray, norm_eps: float) -> float:
    """``min(1, ||direct|| / (||response|| + norm_eps))``."""
    return min(ALPHA_CAP, norm2(direct) / (norm2(response) + norm_eps))


def leader_stackelberg_grad(batch: RolloutBatch, leader_policy: PolicyFamily, follower_policy: PolicyFamily,
                            leader_params, follower_params, cfg: TrainConfig) -> StackelbergGradient:
    """Direct leader gradient plus the normalized follower-response term.

    The response vector ``x`` solves ``(F + lambda I) x = dJ^L/dthetaF``.
    Because ``F + lambda I`` stands in for the negated follower Hessian,
    ``cross_jvp(x)`` already is the chain-rule correction through the
    follower's best response, so it is added (``response_sign = +1``).
    ``response_sign = -1`` subtracts it instead.
    """
    clip = cfg.clip
    g_dir = leader_direct_grad(batch, leader_policy, leader_params, clip)
    rhs = leader_grad_wrt_follower(batch, follower_policy, follower_params, clip)
    operator = "analytic" if cfg.effective_mode == "analytic_hessian" else "fisher"
    rep = solve_response(batch, follower_policy, follower_params, rhs, cfg.cg, operator=operator)
    g_resp = cross_jvp(batch, leader_policy, follower_policy, leader_params, follower_params, rep.solution, clip)
    alpha = balance_alpha(g_dir, g_resp, cfg.norm_eps)
    assembled = g_dir + cfg.response_sign * alpha * g_resp
    return StackelbergGradient(g_dir, g_resp, alpha, assembled, rep, cfg.response_sign)


def _clip_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    n = norm2(g)
    return g * (max_norm / n) if n > max_norm else g


def _make_value(env, phase: str) -> ValueFunction:
    dim = env.leader_value_dim if phase == "leader" else env.follower_value_dim
    return ValueFunction.create(dim, phase)


def train(env: SmgSpec, cfg: TrainConfig, leader_policy: PolicyFamily | None = None,
          follower_policy: PolicyFamily | None = None, init_params: tuple | None = None,
          on_epoch=None) -> TrainResult:
    """Run ``cfg.epochs`` epochs of rollout, value fitting and alternating policy steps.

    Each epoch draws its batch from ``make_rng(seed, "rollout", epoch)``, so
    runs are reproducible and independent of wall time.  ``on_epoch`` is
    called with every :class:`EpochMetrics` as soon as it is available.
    """
    if leader_policy is None or follower_policy is None:
        leader_policy, follower_policy = env.make_policies()
    if init_params is None:
        theta_l = leader_policy.init_params(make_rng(cfg.seed, "init-leader"))
        theta_f = follower_policy.init_params(make_rng(cfg.seed, "init-follower"))
    else:
        theta_l, theta_f = (np.array(p, dtype=np.float64) for p in init_params)
    result = TrainResult([], theta_l.copy(), theta_f.copy())
    if cfg.epochs == 0:
        return result
    adv_cfg = AdvantageConfig(cfg.gamma, cfg.gae_lambda, cfg.normalize_advantages)
    lvf, fvf = _make_value(env, "leader"), _make_value(env, "follower")
    opt_l = AdamState.zeros(leader_policy.param_dim, cfg.leader_lr)
    opt_f = AdamState.zeros(follower_policy.param_dim, cfg.follower_lr)
    mode = cfg.effective_mode
    env_steps = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        try:
            batch = collect_rollouts(env, leader_policy, theta_l, follower_policy, theta_f,
                                     cfg.batch_trajectories, make_rng(cfg.seed, "rollout", epoch))
            batch = discounted_returns(batch)
            lvf = fit_value(lvf, batch, cfg.value_lr, cfg.value_epochs)
            fvf = fit_value(fvf, batch, cfg.value_lr, cfg.value_epochs)
            batch = compute_follower_advantages(batch, fvf, adv_cfg)
            batch = compute_leader_advantages(batch, lvf, adv_cfg)
            records = []
            for it in range(cfg.ppo_iters):
                g_f = _clip_norm(follower_ppo_grad(batch, follower_policy, theta_f, cfg.clip), cfg.max_grad_norm)
                opt_f, theta_f = adam_step(opt_f, theta_f, -g_f)
                if mode == "vanilla":
                    g_l = leader_direct_grad(batch, leader_policy, theta_l, cfg.clip)
                else:
                    sg = leader_stackelberg_grad(batch, leader_policy, follower_policy, theta_l, theta_f, cfg)
                    g_l = sg.assembled
                    records.append(
                        LeaderStepRecord(epoch, it, norm2(sg.direct), norm2(sg.response), sg.alpha,
                                         sg.cg.iters_used, sg.cg.final_rel_residual, sg.cg.converged)
                    )
                opt_l, theta_l = adam_step(opt_l, theta_l, -_clip_norm(g_l, cfg.max_grad_norm))
        except NumericsError as exc:
            raise NumericsError(
                f"{exc} [epoch {epoch}, batch rng key (seed={cfg.seed}, purpose='rollout', index={epoch})]"
            ) from exc
        env_steps += batch.env_steps
        wall = (time.perf_counter() - t0) * 1e3
        result.wall_ms.append(wall)
        result.leader_steps.extend(records)
        eps = cfg.ppo_clip_eps if cfg.ppo_clip_eps is not None else 0.2
        m = EpochMetrics(
            epoch=epoch,
            env_steps=env_steps,
            leader_return=float(np.mean(batch.leader_returns_per_traj())),
            follower_return=float(np.mean(batch.follower_returns_per_traj())),
            kl=follower_kl(batch, follower_policy, theta_f),
            clip_frac=follower_clip_fraction(batch, follower_policy, theta_f, eps),
            cg_iters=float(np.mean([r.cg_iters for r in records])) if records else 0.0,
            cg_converged=float(np.mean([r.cg_converged for r in records])) if records else 1.0,
            alpha=float(np.mean([r.alpha for r in records])) if records else 0.0,
            wall_ms=round(wall, 3) if cfg.log_wall_time else 0.0,
        )
        result.metrics.append(m)
        if on_epoch is not None:
            on_epoch(m)
    result.leader_params, result.follower_params = theta_l, theta_f
    return result


@dataclass(frozen=True)
class SweepRow:
    fisher_lambda: float
    seed: int
    final_return: float


def _sweep_job(args):
    env_factory, cfg = args
    res = train(env_factory(cfg), cfg)
    return SweepRow(cfg.fisher_lambda, cfg.seed, res.final_return(cfg.final_window))


def lambda_sweep(env_factory, base_cfg: TrainConfig, lambdas, seeds, workers: int = 1) -> list[SweepRow]:
    """Train once per ``(lambda, seed)``; ``lambda = inf`` runs the vanilla mode.

    ``env_factory(cfg)`` builds the environment for a run.  With
    ``workers > 1`` runs execute in separate processes; rows come back in
    ``(lambda, seed)`` order either way.
    """
    from dataclasses import replace

    jobs = [(env_factory, replace(base_cfg, fisher_lambda=float(lam), seed=int(s))) for lam in lambdas for s in seeds]
    if workers <= 1:
        return [_sweep_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_job, jobs))


def summarize_sweep(rows: list[SweepRow]) -> list[tuple[float, float, float, int]]:
    """``(lambda, mean, std, n)`` per lambda, in first-seen order."""
    out = []
    for lam in dict.fromkeys(r.fisher_lambda for r in rows):
        vals = np.array([r.final_return for r in rows if r.fisher_lambda == lam])
        out.append((lam, float(vals.mean()), float(vals.std()), len(vals)))
    return out
