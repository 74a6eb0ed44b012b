import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from egoplan.configio import load_robot_model


@pytest.fixture(scope="session")
def model():
    return load_robot_model()


def random_q(model, gen):
    lo = model.lower_limits
    hi = model.upper_limits
    return lo + (hi - lo) * gen.random(lo.shape)
