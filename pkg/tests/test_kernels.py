import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stackelberg_ppo import _pykernels, kernels

ckernels = pytest.importorskip("stackelberg_ppo._ckernels", reason="compiled extension not built")


@given(st.lists(st.integers(0, 6), min_size=1, max_size=6), st.floats(0.1, 1.0), st.floats(0.0, 1.0),
       st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_gae_backends_agree(counts, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    n = sum(counts)
    args = (rng.normal(size=n), rng.normal(size=n), rng.normal(size=len(counts)), np.array(counts, dtype=np.int64),
            gamma, lam)
    np.testing.assert_allclose(ckernels.gae_segments(*args), _pykernels.gae_segments(*args), rtol=1e-13, atol=1e-13)


@given(st.integers(1, 60), st.floats(0.0, 5.0), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_chainwalker_backends_agree(horizon, force_limit, seed):
    rng = np.random.default_rng(seed)
    args = (rng.normal(size=3), float(rng.normal()), float(rng.normal(0, 0.5)), rng.random(2), 1.0 + rng.random(),
            0.5 + 0.5 * rng.random(), rng.normal(size=horizon), 0.05, 1e-4, force_limit)
    for c, p in zip(ckernels.chainwalker_rollout(*args), _pykernels.chainwalker_rollout(*args)):
        np.testing.assert_allclose(c, p, rtol=1e-12, atol=1e-12)


def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_pure_python_override():
    env = dict(os.environ, STACKELBERG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from stackelberg_ppo import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
