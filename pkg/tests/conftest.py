import sys
from pathlib import Path

import numpy as np
import pytest

import edgeann as ea

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def small_catalog():
    """48 entities in 8 dimensions, 4 loose clusters."""
    return ea.generate_synthetic(48, 8, 4, seed=11)


@pytest.fixture
def medium_catalog():
    return ea.generate_synthetic(256, 16, 8, seed=7)


def random_instance(rng, max_n=500, max_d=32):
    """A random catalog plus one query of matching dimension."""
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    points = rng.normal(size=(n, d))
    # Duplicate a few rows so distance ties actually occur.
    dupes = int(rng.integers(0, min(5, n)))
    for _ in range(dupes):
        points[int(rng.integers(n))] = points[int(rng.integers(n))]
    catalog = ea.Catalog.from_matrix(points)
    query = rng.normal(size=d)
    if rng.random() < 0.3:
        # Place the query exactly on a catalog point sometimes.
        query = points[int(rng.integers(n))].copy()
    return catalog, query
