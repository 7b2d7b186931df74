import functools

import numpy as np
import pytest

from mcfsurgery.geometry import make_sphere_mesh, make_torus_mesh


@functools.lru_cache(maxsize=None)
def sphere(level: int, radius: float = 1.0):
    return make_sphere_mesh(radius, level)


@pytest.fixture
def sphere_mesh():
    return sphere


@pytest.fixture(scope="session")
def torus_mesh():
    return make_torus_mesh(2.0, 0.75, 24, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def eoc(errors, sizes):
    errors, sizes = np.asarray(errors, float), np.asarray(sizes, float)
    return np.log(errors[:-1] / errors[1:]) / np.log(sizes[:-1] / sizes[1:])
