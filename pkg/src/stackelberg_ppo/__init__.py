"""Stackelberg PPO for phase-separated leader-follower Markov games."""

__version__ = "0.1.0"

from .advantage import AdvantageConfig, ValueFunction, compute_follower_advantages, compute_leader_advantages, fit_value
from .envs import ChainWalkerEnv, EnumerationOracle, TabularCoDesignSMG, make_env
from .errors import ConfigError, DimensionError, EnvError, NumericsError, StackelbergError, UnsupportedError
from .numerics import AdamState, adam_step, dot, make_rng, norm2
from .policies import LinearGaussianPolicy, MlpSoftmaxPolicy, PolicyFamily, TabularSoftmaxPolicy
from .smg import RolloutBatch, SmgSpec, Trajectory, collect_rollouts
from .solver import CgConfig, CgReport, conjugate_gradient, solve_response
from .surrogates import (
    ClipConfig,
    analytic_hessian_vp,
    cross_jvp,
    fisher_vp,
    follower_ppo_grad,
    leader_direct_grad,
    leader_grad_wrt_follower,
)
from .trainer import EpochMetrics, StackelbergGradient, TrainConfig, lambda_sweep, leader_stackelberg_grad, train
