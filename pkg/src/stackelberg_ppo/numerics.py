"""Vector helpers, the Adam optimizer and the seeding contract.

Parameter vectors are plain 1-D ``float64`` numpy arrays.  Every function
here is pure: inputs are never mutated, new arrays are returned.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericsError

ParamVector = np.ndarray


def as_vector(values, dim: int | None = None) -> ParamVector:
    """Return ``values`` as a finite 1-D float64 array (a fresh copy)."""
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and vec.shape[0] != dim:
        raise DimensionError(f"expected a vector of dim {dim}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise NumericsError("parameter vector contains non-finite entries")
    return vec


def dot(a: ParamVector, b: ParamVector) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dot of shapes {a.shape} and {b.shape}")
    return float(np.dot(a, b))


def norm2(a: ParamVector) -> float:
    a = np.asarray(a, dtype=np.float64)
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # rescaled to avoid under/overflow of the squared entries
    return scale * float(np.sqrt(dot(a / scale, a / scale)))


def cosine(a: ParamVector, b: ParamVector) -> float:
    na, nb = norm2(a), norm2(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return dot(a, b) / (na * nb)


@dataclass(frozen=True)
class AdamState:
    first_moment: ParamVector
    second_moment: ParamVector
    step_count: int = 0
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def zeros(cls, dim: int, lr: float, **kwargs) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, lr, **kwargs)


def adam_step(state: AdamState, params: ParamVector, grad: ParamVector) -> tuple[AdamState, ParamVector]:
    """One bias-corrected Adam descent step on ``grad``.

    Callers maximizing an objective pass the negated gradient.
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise DimensionError(
            f"adam_step shapes: params {params.shape}, grad {grad.shape}, "
            f"state {state.first_moment.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericsError("non-finite gradient passed to adam_step")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new_params


def purpose_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def make_rng(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, purpose, index)``.

    Streams for different keys are independent, so work that is split across
    workers stays reproducible regardless of scheduling.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, purpose_id(purpose), int(index)])
    return np.random.Generator(np.random.Philox(ss))
