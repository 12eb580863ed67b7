"""Matrix-free conjugate gradient for the follower response system."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericsError
from .policies import PolicyFamily
from .smg import RolloutBatch
from .surrogates import analytic_hessian_vp, fisher_vp

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 20
    rel_tol: float = 1e-3
    damping: float = 5.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.rel_tol <= 0.0:
            raise ValueError("rel_tol must be positive")
        if not self.damping >= 0.0:
            raise ValueError("damping must be non-negative")


@dataclass(frozen=True)
class CgReport:
    solution: np.ndarray
    iters_used: int
    final_rel_residual: float
    converged: bool
    damping_used: float = 0.0


def conjugate_gradient(apply_A: Callable[[np.ndarray], np.ndarray], b, cfg: CgConfig) -> CgReport:
    """Solve ``A x = b`` for symmetric positive definite ``A`` starting from ``x = 0``.

    Stops once ``||A x - b|| / ||b|| <= rel_tol``.  If the budget runs out, or
    a direction of non-positive curvature shows up, the best iterate so far
    is returned with ``converged=False``.  The reported residual is recomputed
    from ``A x`` after the loop.
    """
    b = np.asarray(b, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise NumericsError("non-finite right-hand side")
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return CgReport(x, 0, 0.0, True)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    iters = 0
    for _ in range(cfg.max_iters):
        Ap = np.asarray(apply_A(p), dtype=np.float64)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp):
            raise NumericsError("non-finite curvature in conjugate gradient")
        if pAp <= 0.0:
            break
        step = rr / pAp
        x = x + step * p
        r = r - step * Ap
        iters += 1
        rr_new = float(r @ r)
        if not np.all(np.isfinite(x)):
            raise NumericsError("non-finite iterate in conjugate gradient")
        if np.sqrt(rr_new) <= cfg.rel_tol * b_norm:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    res = float(np.linalg.norm(np.asarray(apply_A(x)) - b) / b_norm)
    if not np.isfinite(res):
        raise NumericsError("non-finite residual in conjugate gradient")
    return CgReport(x, iters, res, res <= cfg.rel_tol)


def effective_damping(damping: float) -> float:
    if damping < LAMBDA_FLOOR:
        log.info("fisher damping %g raised to floor %g", damping, LAMBDA_FLOOR)
        return LAMBDA_FLOOR
    return damping


def solve_response(batch: RolloutBatch, follower_policy: PolicyFamily, params, rhs, cfg: CgConfig,
                   operator: str = "fisher") -> CgReport:
    """Solve ``(F + lambda I) x = rhs`` on a frozen batch.

    With ``operator="analytic"`` the Fisher matrix is replaced by the negated
    analytic Hessian of the follower objective, so both operators stand in
    for the same curvature.  ``lambda`` below ``LAMBDA_FLOOR`` is raised to it.
    """
    lam = effective_damping(cfg.damping)
    params = np.array(params, dtype=np.float64)
    if operator == "fisher":
        def apply_A(v):
            return fisher_vp(batch, follower_policy, params, v, lam)
    elif operator == "analytic":
        def apply_A(v):
            return -analytic_hessian_vp(batch, follower_policy, params, v) + lam * v
    else:
        raise ValueError(f"unknown operator {operator!r}")
    rep = conjugate_gradient(apply_A, rhs, cfg)
    return CgReport(rep.solution, rep.iters_used, rep.final_rel_residual, rep.converged, lam)
