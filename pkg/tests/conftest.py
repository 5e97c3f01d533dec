import pytest

from privsum.graph import default_demo_graph
from privsum.weights import WeightParams


@pytest.fixture
def demo_graph():
    return default_demo_graph()


@pytest.fixture
def demo_params():
    return WeightParams(big_k=1, epsilon=0.01)


@pytest.fixture
def demo_x0():
    return [10.0, 15.0, 20.0, 25.0, 30.0]
