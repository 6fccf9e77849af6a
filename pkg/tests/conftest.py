import numpy as np
import pytest

from wassreg.measures import EmpiricalMeasure, make_uniform_measure


def random_cloud(rng, k, d, offset=0.0, scale=1.0):
    return make_uniform_measure(offset + scale * rng.standard_normal((k, d)))


def random_weighted(rng, k, d):
    w = rng.random(k) + 0.05
    return EmpiricalMeasure(rng.standard_normal((k, d)), w / w.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
