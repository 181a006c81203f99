import numpy as np
import pytest

from gabp import generators
from gabp.model import unit_model

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@pytest.fixture
def unit_edge():
    return unit_model([(0, 1)], obs=1.0)


@pytest.fixture
def unit_cycle3():
    return unit_model([(0, 1), (1, 2), (0, 2)], obs=1.0)


@pytest.fixture
def chain3():
    return unit_model([(0, 1), (1, 2)], obs=[1.0, -0.5])


def random_vector_model(seed, topology="random", n=5, **kw):
    kw.setdefault("dims", 2)
    kw.setdefault("coef_mode", "random")
    kw.setdefault("edge_prob", 0.6)
    return generators.generate(generators.GenSpec(topology, n=n, seed=seed, **kw))
