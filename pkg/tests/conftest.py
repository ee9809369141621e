import os
import sys

# Console logging only during tests
os.environ.setdefault("BTG_LOG_DIR", "")
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest
from dataclasses import replace

from config.settings import RunConfig, resolve_data_path
from network.case import read_case


@pytest.fixture
def case9():
    return read_case(resolve_data_path("case9", "cases", ".case"))


@pytest.fixture
def twobus():
    return read_case(resolve_data_path("twobus", "cases", ".case"))


@pytest.fixture
def small_cfg():
    """Two-bus network, three buildings, 300 s horizon, one 600 s run."""
    cfg = RunConfig()
    return replace(
        cfg,
        grid=replace(cfg.grid, case="twobus"),
        buildings=replace(cfg.buildings, count=3),
        horizon=replace(cfg.horizon, prediction_horizon=300.0, grid_step=10.0, building_step=100.0),
        simulation=replace(cfg.simulation, final_time=600.0, seeds=[1, 2]),
    ).validate()


@pytest.fixture
def case9_cfg():
    """case9 with ten buildings on the short horizon used by the property suites."""
    cfg = RunConfig()
    return replace(
        cfg,
        buildings=replace(cfg.buildings, count=10),
        horizon=replace(cfg.horizon, prediction_horizon=300.0, grid_step=10.0, building_step=100.0),
        simulation=replace(cfg.simulation, final_time=300.0),
    ).validate()
