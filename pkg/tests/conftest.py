"""Shared fixtures: small hand-built networks, the bundled policies and region sets."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from guided_shield.box import Box
from guided_shield.env import EnvConfig, WorldMap
from guided_shield.policy import Network, TrainerConfig, heuristic_network, load_network, train_policy
from guided_shield.property import LinearTerm, Relation, SafetyProperty, particle_world_properties
from guided_shield.regions import LabeledRegionSet, SplitterConfig, refine, split_domain
from guided_shield.verifier import VerifierBudget

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "guided_shield" / "data"


def toy_network() -> Network:
    """2-2-1 network with output 6 * relu(x1 + 3 x2 + 3) - relu(-2 x1 - x2 - 1)."""
    return Network.from_arrays(
        [[[1.0, 3.0], [-2.0, -1.0]], [[6.0, -1.0]]],
        [[3.0, -1.0], [0.0]],
    )


def constant_network(outputs: list[float], n_in: int = 8, hidden: int = 4) -> Network:
    """Network whose output ignores the input."""
    n_out = len(outputs)
    return Network.from_arrays(
        [np.zeros((hidden, n_in)), np.zeros((n_out, hidden))],
        [np.zeros(hidden), np.array(outputs, dtype=np.float64)],
    )


def output_property(
    name: str,
    coeff: float,
    constant: float,
    relation: Relation,
    n_in: int = 2,
    box: Box | None = None,
) -> SafetyProperty:
    """Single-output property `coeff * y + constant <relation> 0` without selector."""
    return SafetyProperty(
        name=name,
        input_box=box or Box.unit(n_in),
        argmax_selector=None,
        linear_terms=(LinearTerm((coeff,), (0.0,) * n_in, constant, relation),),
        output_dim=1,
    )


@pytest.fixture
def toy_net() -> Network:
    return toy_network()


@pytest.fixture
def zero_net() -> Network:
    """All-zero 8-4-4 network; argmax is Right with magnitude 0, which never violates G1-G4."""
    return constant_network([0.0, 0.0, 0.0, 0.0])


@pytest.fixture(scope="session")
def safe_policy() -> Network:
    return heuristic_network(avoid_obstacles=True)


@pytest.fixture(scope="session")
def greedy_policy() -> Network:
    return load_network(DATA_DIR / "networks" / "unsafe_greedy.json")


@pytest.fixture(scope="session")
def g_properties() -> list[SafetyProperty]:
    return particle_world_properties()


@pytest.fixture
def empty_world() -> WorldMap:
    return WorldMap(id=0, obstacles=())


@pytest.fixture(scope="session")
def small_splitter() -> SplitterConfig:
    """ln(1/0.1)/0.1 = 23.03, so 30 samples satisfy the bound."""
    return SplitterConfig(
        samples_per_region=30,
        violation_fraction_threshold=0.3,
        max_depth=4,
        epsilon=0.1,
        delta=0.1,
        seed=7,
    )


@pytest.fixture(scope="session")
def greedy_regions(greedy_policy, g_properties, small_splitter) -> LabeledRegionSet:
    return split_domain(greedy_policy, g_properties, small_splitter)


@pytest.fixture(scope="session")
def refined_greedy_regions(greedy_policy, g_properties, greedy_regions) -> LabeledRegionSet:
    return refine(
        greedy_policy,
        g_properties,
        greedy_regions,
        VerifierBudget(max_branches=20_000, time_limit_s=30.0),
    )


# Training seeds of the desk-trained policies.
TRAINED_SEEDS = (12, 66, 99)


@pytest.fixture(scope="session")
def trained_policies() -> dict[int, Network]:
    """Policies evolved from the heuristic warm start, keyed by training seed."""
    return {seed: train_policy(EnvConfig(), TrainerConfig(), seed) for seed in TRAINED_SEEDS}


@pytest.fixture(scope="session")
def trained_regions(trained_policies, g_properties) -> dict[int, LabeledRegionSet]:
    """Refined region sets of the trained policies at the default splitter settings."""
    budget = VerifierBudget(max_branches=20_000, time_limit_s=10.0)
    regions = {}
    for seed, net in trained_policies.items():
        approx = split_domain(net, g_properties, SplitterConfig(seed=seed))
        regions[seed] = refine(net, g_properties, approx, budget)
    return regions
