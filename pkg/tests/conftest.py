"""Shared test fixtures for bearing-align tests."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import pytest

from bearing_align.network import NetworkModel, compile_network
from bearing_align.schema import Scenario, default_scenario
from bearing_align.simulator import TrajectoryLog, run
from bearing_align.so3 import Rotation


@pytest.fixture(autouse=True)
def _reset_package_logger() -> Iterator[None]:
    """Undo the CLI's handler installation so caplog sees package records."""
    yield
    package_logger = logging.getLogger("bearing_align")
    package_logger.handlers.clear()
    package_logger.propagate = True
    package_logger.setLevel(logging.NOTSET)


@pytest.fixture
def scenario() -> Scenario:
    """The bundled eight-agent, two-landmark scenario."""
    return default_scenario()


@pytest.fixture
def short_scenario(scenario: Scenario) -> Scenario:
    """Default geometry on a coarse step and a one-second horizon."""
    return scenario.with_integration(dt=1e-2, t_end=1.0)


@pytest.fixture
def aligned_scenario(scenario: Scenario) -> Scenario:
    """Every agent starts with the leader's orientation, at rest."""
    leader = scenario.initial_rotations()[0]
    return scenario.with_initial_state([leader] * scenario.n)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def network(scenario: Scenario) -> NetworkModel:
    return compile_network(scenario)


@pytest.fixture
def random_state(scenario: Scenario, rng: np.random.Generator) -> list[Rotation]:
    """Independent Haar-random orientations for every agent."""
    from bearing_align.so3 import random_rotation

    return [random_rotation(rng) for _ in range(scenario.n)]


@pytest.fixture
def scenario_file(tmp_path: Path, scenario: Scenario) -> Path:
    from bearing_align.ingest import save_scenario

    return save_scenario(scenario, tmp_path / "scenario.json")


@pytest.fixture(scope="session")
def default_run() -> tuple[TrajectoryLog, float]:
    """Default scenario at its own integration settings, with the wall time of the run."""
    start = time.perf_counter()
    log = run(default_scenario(), seed=42)
    return log, time.perf_counter() - start


@pytest.fixture(scope="session")
def default_log(default_run: tuple[TrajectoryLog, float]) -> TrajectoryLog:
    """The default run (dt=1e-3, t_end=30 s, every tenth step logged), shared across tests."""
    return default_run[0]
