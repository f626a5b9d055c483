import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from triview.synth import synthetic_scan


@pytest.fixture(scope="session")
def fixture_scan():
    """The big deterministic scan used for trend and throughput checks."""
    return synthetic_scan(120_000, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cloud(rng, n, channels=2, spread=4.0):
    from triview.pcio import PointCloud

    positions = rng.uniform(-spread, spread, (n, 3))
    # keep every point strictly away from the sensor origin
    norms = np.sqrt((positions**2).sum(axis=1))
    positions[norms < 1e-3] += 1.0
    return PointCloud(positions, rng.uniform(-1.0, 1.0, (n, channels)))
