"""Shared fixtures and the acceptance-criterion summary."""

from pathlib import Path

import numpy as np
import pytest

from stackelberg_ppo.envs import EnumerationOracle, TabularCoDesignSMG
from stackelberg_ppo.numerics import make_rng
from stackelberg_ppo.smg import collect_rollouts

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "stackelberg_ppo" / "configs"
_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture(scope="session")
def game():
    return TabularCoDesignSMG()


@pytest.fixture(scope="session")
def oracle(game):
    return EnumerationOracle(game)


@pytest.fixture(scope="session")
def point(oracle):
    """A generic parameter pair for the tabular game."""
    rng = make_rng(7, "test-point")
    return (rng.normal(0.0, 1.0, oracle.leader_policy.param_dim),
            rng.normal(0.0, 1.0, oracle.follower_policy.param_dim))


@pytest.fixture(scope="session")
def exact_batch(oracle, point):
    return oracle.exact_batch(*point)


@pytest.fixture(scope="session")
def mc_batch(game, oracle, point):
    """100k sampled trajectories at ``point`` for Monte Carlo cross-checks."""
    tl, tf = point
    return collect_rollouts(game, oracle.leader_policy, tl, oracle.follower_policy, tf, 100_000,
                            make_rng(21, "test-mc"))


@pytest.fixture
def report_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

