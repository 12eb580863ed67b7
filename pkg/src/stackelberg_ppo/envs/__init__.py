"""Built-in phase-separated games, selectable by name."""

from .chainwalker import ChainWalkerEnv
from .tabular import DEFAULT_SEED, EnumerationOracle, TabularCoDesignSMG

ENVIRONMENTS = {"tabular": TabularCoDesignSMG, "chainwalker": ChainWalkerEnv}


def make_env(name: str, **kwargs):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(**kwargs)


__all__ = ["ChainWalkerEnv", "DEFAULT_SEED", "ENVIRONMENTS", "EnumerationOracle", "TabularCoDesignSMG", "make_env"]
