"""Backend selection for the sequential kernels.

The compiled extension is used when it was built; setting the environment
variable ``STACKELBERG_PURE_PYTHON=1`` forces the pure-Python fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("STACKELBERG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

gae_segments = _impl.gae_segments
chainwalker_rollout = _impl.chainwalker_rollout

__all__ = ["BACKEND", "gae_segments", "chainwalker_rollout"]
