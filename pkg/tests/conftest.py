import math
from pathlib import Path

import pytest

from optimizer import SolverConfig
from topology import load_scenario_file

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIOS


@pytest.fixture
def toy():
    return load_scenario_file(SCENARIOS / "toy.json5")


@pytest.fixture
def single_link():
    return load_scenario_file(SCENARIOS / "single_link.json5")


@pytest.fixture
def grid_two():
    return load_scenario_file(SCENARIOS / "grid_two_flows.json5")


@pytest.fixture
def grid_three():
    return load_scenario_file(SCENARIOS / "grid_three_flows.json5")


@pytest.fixture
def fast_solver() -> SolverConfig:
    """Short annealing schedule; the compass polish does most of the work."""
    return SolverConfig(seed=3, restarts=3, cooling_factor=0.7, iterations_per_temperature=20,
                        min_temperature=1e-3)


def node(node_id, x, y, role, q=None, gamma=1.0, tx_power=0.1, noise=7e-11):
    doc = {"id": node_id, "x_m": x, "y_m": y, "tx_power_w": tx_power, "noise_w": noise,
           "sinr_threshold": gamma, "role": role}
    if q is not None:
        doc["q"] = q
    return doc


def document(nodes, flows, alpha=4.0, policy="path_nodes"):
    return {"channel": {"alpha": alpha}, "interference_policy": policy, "nodes": nodes, "flows": flows}


def geometry(positions):
    return lambda i, j: math.dist(positions[i], positions[j])
