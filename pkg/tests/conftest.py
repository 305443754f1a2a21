import numpy as np
import pytest

from l1imaging.geometry import build_geometry


@pytest.fixture
def small_geom():
    """Single frequency, 4 x 4 x 2 grid, 11 x 11 receivers."""
    return build_geometry({"aperture": 25, "range": 1000, "mesh": [10, 60], "cells": [4, 4, 2],
                           "array_spacing": 2.5})


@pytest.fixture
def multi_geom():
    return build_geometry({"aperture": 25, "range": 1000, "mesh": [10, 60], "cells": [3, 3, 2],
                           "array_spacing": 5, "bandwidth": 0.2, "n_frequencies": 5})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unit_matrix(rng, m, n):
    A = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    return A / np.linalg.norm(A, axis=0)
