"""Shared fixtures. Policy and grounding weights come from the bundled
files (regenerated by scripts/train_weights.py) so tests spend their time
on behavior, not on retraining."""

import pytest

from wayfinder.assets import data_path, load_json
from wayfinder.grounding import Grounder, GroundingWeights, SymbolSpace
from wayfinder.harness import load_directions
from wayfinder.harness.cli import load_policy_weights
from wayfinder.relations import RelationLibrary


@pytest.fixture(scope="session")
def grounder():
    return Grounder(GroundingWeights.from_json(
        load_json("weights", "grounding.json"), SymbolSpace.default()))


@pytest.fixture(scope="session")
def relations():
    return RelationLibrary.default()


@pytest.fixture(scope="session")
def directions():
    return load_directions()


@pytest.fixture(scope="session")
def sim3_weights():
    """Per-baseline bundle trained on the sim-3room direction set."""
    return load_policy_weights(data_path("weights", "policy-sim-3room.json"))


@pytest.fixture(scope="session")
def stata_weights():
    """Per-baseline bundle trained on the stata-lobby direction set."""
    return load_policy_weights(data_path("weights", "policy-stata-lobby.json"))
