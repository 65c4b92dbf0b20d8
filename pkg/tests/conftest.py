import numpy as np
import pytest

from brachiation.configspace import BarLayout, swing_endpoints
from brachiation.dynamics import RobotParams


@pytest.fixture
def proto() -> RobotParams:
    return RobotParams.prototype()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240531)


@pytest.fixture
def proto_layout() -> BarLayout:
    return BarLayout(((0.0, 0.0), (0.4, 0.0)))


@pytest.fixture
def proto_endpoints(proto, proto_layout):
    return swing_endpoints(proto, proto_layout)


@pytest.fixture
def random_states(rng) -> np.ndarray:
    """1000 states with angles anywhere and joint rates up to 3 rad/s."""
    q = rng.uniform(-np.pi, np.pi, (1000, 3))
    dq = rng.uniform(-3.0, 3.0, (1000, 3))
    return np.hstack([q, dq])
