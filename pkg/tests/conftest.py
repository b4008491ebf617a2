import numpy as np
import pytest

from aoi_guard import (
    AgentClassSpec,
    MarkovSource,
    SimConfig,
    SolverSettings,
    banded_safety_map,
    build_row_chain,
    identity_safety_map,
    loss_01,
    loss_safety_example,
    solve_system,
)

CHAIN_A_MATRIX = [[0.9, 0.1], [0.2, 0.8]]


@pytest.fixture()
def chain_a():
    return MarkovSource(CHAIN_A_MATRIX, delta_bound=250, name="chain_a")


@pytest.fixture()
def chain_a_class(chain_a):
    return AgentClassSpec(chain_a, identity_safety_map(2), loss_01(2), success_prob=0.95, name="chain_a")


def make_grid_classes(member_counts=(10, 10), delta_bound=250):
    safety = banded_safety_map(20, (6, 13))
    loss = loss_safety_example()
    fast = AgentClassSpec(
        build_row_chain(20, 0.3, 0.3, delta_bound=delta_bound, name="fast"),
        safety, loss, 0.95, member_counts[0], name="fast",
    )
    drift = AgentClassSpec(
        build_row_chain(20, 0.05, 0.05, delta_bound=delta_bound, name="drift"),
        safety, loss, 0.95, member_counts[1], name="drift",
    )
    return (fast, drift)


def random_primitive_source(rng, states, delta_bound=150):
    """Dirichlet rows with a positive floor, so the chain is primitive."""
    p = rng.dirichlet(np.ones(states), size=states)
    p = 0.95 * p + 0.05 / states
    p /= p.sum(axis=1, keepdims=True)
    return MarkovSource(p, delta_bound=delta_bound)


@pytest.fixture(scope="session")
def grid_config():
    return SimConfig(make_grid_classes(), channels=2, slots=100_000, seed=1, policy="mgf")


@pytest.fixture(scope="session")
def grid_system(grid_config):
    return solve_system(grid_config, SolverSettings(beta=0.2), with_gains=True)
