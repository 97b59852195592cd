import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from capex.model import NetworkStructure, VariableSpec, uniform_model
from capex.learner import initial_learner_state


@pytest.fixture
def ballkick_vars():
    return (
        VariableSpec("Position", ("LeftSide", "Middle", "RightSide"), "command", True),
        VariableSpec("KDc", ("Left", "Mid", "Right"), "command", True),
        VariableSpec("KDo", ("Left", "Mid", "Right", "None"), "outcome"),
    )


@pytest.fixture
def ballkick_structure(ballkick_vars):
    return NetworkStructure(ballkick_vars, {"KDo": ("Position", "KDc")})


@pytest.fixture
def ballkick_model(ballkick_structure):
    return uniform_model(ballkick_structure)


@pytest.fixture
def ballkick_learner(ballkick_model):
    return initial_learner_state(ballkick_model)
