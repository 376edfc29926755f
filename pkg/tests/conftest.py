import numpy as np
import pytest

from harmonyep import ClusterShape, LoadMatrix, Placement, random_placement


@pytest.fixture
def ring4_placement():
    """4 GPUs, shuffled EDP groups {0,3},{0,1},{1,2},{2,3}."""
    return Placement(4, ((0, 3), (0, 1), (1, 2), (2, 3)), (0, 0, 1, 1))


@pytest.fixture
def ring4_loads():
    """Expert totals (4, 6, 14, 8), each originating on one GPU."""
    return LoadMatrix(((4, 0, 0, 0), (0, 6, 0, 0), (0, 0, 14, 0), (0, 0, 0, 8)))


@pytest.fixture
def identical4_placement():
    """4 GPUs with identical per-EP-group placement: e0,e1 on {0,2}; e2,e3 on {1,3}."""
    return Placement(4, ((0, 2), (0, 2), (1, 3), (1, 3)), (0, 1, 0, 1))


def random_instance(rng: np.random.Generator, max_gpus=10, max_experts=20, d_choices=(2, 3)):
    """A random placement plus integer load matrix, for property tests."""
    num_gpus = int(rng.integers(4, max_gpus + 1))
    num_experts = int(rng.integers(4, max_experts + 1))
    d = int(rng.choice(d_choices))
    shape = ClusterShape(num_gpus, num_experts, d)
    placement = random_placement(shape, int(rng.integers(0, 10**6)))
    loads = LoadMatrix.from_array(rng.integers(0, 101, size=(num_experts, num_gpus)))
    return shape, placement, loads
