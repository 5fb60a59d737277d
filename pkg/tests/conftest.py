import numpy as np
import pytest

from relbal.fubini_study import default_grid
from relbal.geometry import build_model
from relbal.hermitian_space import splitting_from_weights


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def setup(descriptor, torus="maximal", level=2):
    """``(model, splitting, grid)`` for a descriptor and torus choice."""
    model = build_model(descriptor)
    sp = splitting_from_weights(model.basis, torus)
    return model, sp, default_grid(model, sp, level)


@pytest.fixture
def make_setup():
    return setup
