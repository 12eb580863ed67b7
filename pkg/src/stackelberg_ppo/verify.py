"""Oracle checks behind ``verify``: exact-enumeration identities plus Monte Carlo cross-checks.

The ``fast`` level evaluates every estimator on the complete enumerated
batch of the tabular game, where each one is an exact expectation and can
be compared with finite differences of the enumerated objectives.  The
``full`` level adds sampled-rollout checks at three standard errors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import solver, surrogates
from .advantage import (
    AdvantageConfig,
    ValueFunction,
    compute_follower_advantages,
    compute_leader_advantages,
    discounted_returns,
)
from .envs import ChainWalkerEnv, EnumerationOracle, TabularCoDesignSMG
from .numerics import cosine, make_rng
from .policies import LinearGaussianPolicy, TabularSoftmaxPolicy
from .smg import collect_rollouts
from .trainer import TrainConfig, leader_stackelberg_grad, train


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<48s} error={self.error:.3e}  tol={self.tolerance:.1e}"


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def central_diff(f, x, step):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return out


def _check(name, error, tol) -> CheckResult:
    return CheckResult(name, float(error), tol, bool(np.isfinite(error) and error <= tol))


def reference_point(seed: int = 7):
    """The tabular game, its oracle and a generic (non-uniform) parameter pair."""
    game = TabularCoDesignSMG()
    oracle = EnumerationOracle(game)
    rng = make_rng(seed, "verify-point")
    theta_l = rng.normal(0.0, 1.0, oracle.leader_policy.param_dim)
    theta_f = rng.normal(0.0, 1.0, oracle.follower_policy.param_dim)
    return game, oracle, theta_l, theta_f


def first_order_checks(oracle, theta_l, theta_f, clip=surrogates.ClipConfig(0.2)) -> list[CheckResult]:
    batch = oracle.exact_batch(theta_l, theta_f)
    L, F = oracle.leader_policy, oracle.follower_policy
    fd_ll = central_diff(lambda x: oracle.enumerate_objectives(x, theta_f)[0], theta_l, 1e-5)
    fd_lf = central_diff(lambda x: oracle.enumerate_objectives(theta_l, x)[0], theta_f, 1e-5)
    fd_ff = central_diff(lambda x: oracle.enumerate_objectives(theta_l, x)[1], theta_f, 1e-5)
    return [
        _check("leader_direct_grad vs FD of J^L", rel_err(surrogates.leader_direct_grad(batch, L, theta_l, clip), fd_ll), 1e-4),
        _check("leader_grad_wrt_follower vs FD of J^L", rel_err(surrogates.leader_grad_wrt_follower(batch, F, theta_f, clip), fd_lf), 1e-4),
        _check("follower_ppo_grad vs FD of J^F", rel_err(surrogates.follower_ppo_grad(batch, F, theta_f, clip), fd_ff), 1e-4),
    ]


def enumerate_grad_checks(oracle, theta_l, theta_f) -> list[CheckResult]:
    out = []
    for which, x_is_leader, idx in (("JL/thetaL", True, 0), ("JL/thetaF", False, 0), ("JF/thetaF", False, 1)):
        if x_is_leader:
            fd = central_diff(lambda x: oracle.enumerate_objectives(x, theta_f)[idx], theta_l, 1e-6)
        else:
            fd = central_diff(lambda x: oracle.enumerate_objectives(theta_l, x)[idx], theta_f, 1e-6)
        out.append(_check(f"enumerate_grad {which} vs FD", rel_err(oracle.enumerate_grad(theta_l, theta_f, which), fd), 1e-6))
    return out


def cross_jvp_check(oracle, theta_l, theta_f, n_dirs: int = 10, seed: int = 11) -> CheckResult:
    """Sampled-estimator form on the exact batch versus finite differences of the exact gradient.

    The estimator carries the ``gamma**T`` phase offset of the leader
    objective, which the finite-difference target lacks.
    """
    batch = oracle.exact_batch(theta_l, theta_f)
    scale = oracle.game.gamma**oracle.game.leader_horizon
    rng = make_rng(seed, "verify-dirs")
    worst = 0.0
    for _ in range(n_dirs):
        v = rng.normal(size=oracle.follower_policy.param_dim)
        est = surrogates.cross_jvp(batch, oracle.leader_policy, oracle.follower_policy, theta_l, theta_f, v,
                                   surrogates.NO_CLIP)
        worst = max(worst, rel_err(est, scale * oracle.enumerate_cross_jvp(theta_l, theta_f, v)))
    return _check("cross_jvp vs FD of enumerated grad (10 dirs)", worst, 1e-3)


def fisher_checks(oracle, theta_l, theta_f, seed: int = 12) -> list[CheckResult]:
    batch = oracle.exact_batch(theta_l, theta_f)
    F = oracle.follower_policy
    dense = oracle.dense_fisher(theta_l, theta_f)
    v = make_rng(seed, "verify-fisher").normal(size=F.param_dim)
    fvp = surrogates.fisher_vp(batch, F, theta_f, v, 0.0)
    step = 1e-4

    def kl_grad_dot_v(x):
        return central_diff(lambda y: oracle.kl_surrogate(theta_l, theta_f, y), x, step) @ v

    fd_hess = central_diff(kl_grad_dot_v, theta_f, step)
    return [
        _check("fisher_vp vs dense enumerated Fisher", float(np.max(np.abs(fvp - dense @ v))), 1e-10),
        _check("fisher_vp vs FD Hessian of KL surrogate", rel_err(fvp, fd_hess), 1e-3),
    ]


def analytic_hessian_check(oracle, theta_l, theta_f, seed: int = 13) -> CheckResult:
    batch = oracle.exact_batch(theta_l, theta_f)
    F = oracle.follower_policy
    v = make_rng(seed, "verify-hess").normal(size=F.param_dim)
    est = surrogates.analytic_hessian_vp(batch, F, theta_f, v)
    fd = central_diff(lambda x: oracle.enumerate_grad(theta_l, x, "JF/thetaF") @ v, theta_f, 1e-4)
    return _check("analytic_hessian_vp vs FD of enumerated grad", rel_err(est, fd), 1e-3)


def cg_dense_check(oracle, theta_l, theta_f, damping: float = 5.0) -> CheckResult:
    batch = oracle.exact_batch(theta_l, theta_f)
    F = oracle.follower_policy
    rhs = surrogates.leader_grad_wrt_follower(batch, F, theta_f, surrogates.NO_CLIP)
    rep = solver.solve_response(batch, F, theta_f, rhs, solver.CgConfig(20, 1e-3, damping))
    direct = np.linalg.solve(oracle.dense_fisher(theta_l, theta_f) + damping * np.eye(F.param_dim), rhs)
    return _check("solve_response vs dense solve", rel_err(rep.solution, direct), 1e-3)


def interpolation_check(seed: int = 3) -> CheckResult:
    """At huge damping the assembled leader direction lines up with the direct gradient."""
    env = ChainWalkerEnv()
    L, F = env.make_policies()
    theta_l = L.init_params()
    theta_f = F.pack([[0.1, 0.8, 0.4]], [0.5], [0.0])
    cfg = TrainConfig(env="chainwalker", fisher_lambda=1e12, normalize_advantages=False)
    batch = _advantaged_batch(env, L, theta_l, F, theta_f, 32, make_rng(seed, "verify-batch"), cfg)
    sg = leader_stackelberg_grad(batch, L, F, theta_l, theta_f, cfg)
    vanilla = surrogates.leader_direct_grad(batch, L, theta_l, cfg.clip)
    return _check("lambda=1e12 direction vs vanilla (1 - cosine)", 1.0 - cosine(sg.assembled, vanilla), 1e-6)


def _advantaged_batch(env, L, theta_l, F, theta_f, n, rng, cfg):
    batch = discounted_returns(collect_rollouts(env, L, theta_l, F, theta_f, n, rng))
    adv_cfg = AdvantageConfig(cfg.gamma, cfg.gae_lambda, cfg.normalize_advantages)
    batch = compute_follower_advantages(batch, ValueFunction.create(env.follower_value_dim, "follower"), adv_cfg)
    return compute_leader_advantages(batch, ValueFunction.create(env.leader_value_dim, "leader"), adv_cfg)


def normalization_check(epochs: int = 5) -> CheckResult:
    """Every leader step of a short ChainWalker run obeys the response-balance rule."""
    env = ChainWalkerEnv()
    cfg = TrainConfig(env="chainwalker", epochs=epochs, batch_trajectories=16, leader_lr=0.05, follower_lr=0.02,
                      value_lr=0.01)
    res = train(env, cfg)
    worst = 0.0
    for rec in res.leader_steps:
        bound = rec.alpha * rec.response_norm - rec.direct_norm
        formula = abs(rec.alpha - min(1.0, rec.direct_norm / (rec.response_norm + cfg.norm_eps)))
        worst = max(worst, bound, formula)
    return _check("alpha bound and formula on logged steps", max(worst, 0.0), 1e-12)


def policy_family_checks(seed: int = 5) -> list[CheckResult]:
    rng = make_rng(seed, "verify-policy")
    out = []
    tab = TabularSoftmaxPolicy(3, 4)
    gauss = LinearGaussianPolicy(3, 2)
    for name, fam, obs, act in (
        ("tabular", tab, np.array([2]), np.array([1])),
        ("gaussian", gauss, rng.normal(size=(1, 3)), rng.normal(size=(1, 2))),
    ):
        p = rng.normal(size=fam.param_dim)
        fd = central_diff(lambda x: fam.logp(x, obs, act)[0], p, 1e-5)
        out.append(_check(f"{name} score vs FD of logp", rel_err(fam.score(p, obs, act)[0], fd), 1e-5))
        v = rng.normal(size=fam.param_dim)
        fd_h = central_diff(lambda x: fam.score(x, obs, act)[0] @ v, p, 1e-5)
        out.append(_check(f"{name} logp_hvp vs FD of score", rel_err(fam.logp_hvp(p, obs, act, v)[0], fd_h), 1e-4))
    return out


def fast_checks() -> list[CheckResult]:
    _, oracle, theta_l, theta_f = reference_point()
    results = []
    results += policy_family_checks()
    results += enumerate_grad_checks(oracle, theta_l, theta_f)
    results += first_order_checks(oracle, theta_l, theta_f)
    results.append(cross_jvp_check(oracle, theta_l, theta_f))
    results += fisher_checks(oracle, theta_l, theta_f)
    results.append(analytic_hessian_check(oracle, theta_l, theta_f))
    results.append(cg_dense_check(oracle, theta_l, theta_f))
    results.append(interpolation_check())
    results.append(normalization_check())
    return results


def _mc_z(samples: np.ndarray, target) -> float:
    """Largest per-coordinate ``|mean - target| / standard_error``."""
    samples = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    target = np.atleast_1d(np.asarray(target, dtype=np.float64))
    gap = np.abs(samples.mean(axis=0) - target)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    z = np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap < 1e-12, 0.0, np.inf))
    return float(z.max())


def monte_carlo_checks(n: int = 100_000, seed: int = 21) -> list[CheckResult]:
    game, oracle, theta_l, theta_f = reference_point()
    L, F = oracle.leader_policy, oracle.follower_policy
    batch = collect_rollouts(game, L, theta_l, F, theta_f, n, make_rng(seed, "verify-mc"))
    jl, jf = oracle.enumerate_objectives(theta_l, theta_f)
    out = [
        _check("MC leader return vs enumerated J^L (z)", _mc_z(batch.leader_returns_per_traj(), jl), 3.0),
        _check("MC follower return vs enumerated J^F (z)", _mc_z(batch.follower_returns_per_traj(), jf), 3.0),
    ]
    # per-trajectory REINFORCE samples of grad J^L in thetaL
    g_ret = batch.leader_returns_per_traj()
    s = L.score(theta_l, batch.leader_obs, batch.leader_actions)
    per_traj = np.zeros((batch.n_traj, L.param_dim))
    np.add.at(per_traj, batch.leader_traj, s)
    samples = per_traj * g_ret[:, None]
    out.append(_check("MC grad J^L/thetaL vs enumerate_grad (z)",
                      _mc_z(samples, oracle.enumerate_grad(theta_l, theta_f, "JL/thetaL")), 3.0))
    # score identity at a fixed state
    tab = TabularSoftmaxPolicy(1, 4)
    p = make_rng(seed, "verify-score").normal(size=4)
    rng = make_rng(seed, "verify-score-draws")
    acts = np.array([tab.sample(p, 0, rng)[0] for _ in range(n)])
    out.append(_check("MC score identity E[score] = 0 (z)",
                      _mc_z(tab.score(p, np.zeros(n, dtype=int), acts), np.zeros(4)), 3.0))
    return out


def run_checks(level: str = "fast") -> list[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    results = fast_checks()
    if level == "full":
        results += monte_carlo_checks()
    return results


def report(results, stream=None, elapsed: float | None = None) -> bool:
    import sys

    stream = stream or sys.stdout
    for r in results:
        print(r.line(), file=stream)
    ok = all(r.passed for r in results)
    tail = f" in {elapsed:.1f}s" if elapsed is not None else ""
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed{tail}", file=stream)
    return ok


def main(level: str = "fast") -> int:
    t0 = time.perf_counter()
    results = run_checks(level)
    return 0 if report(results, elapsed=time.perf_counter() - t0) else 1
