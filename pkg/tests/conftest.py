from pathlib import Path

import numpy as np
import pytest

from App.calibration.data_model import Grid, validate_dataset

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def make_data():
    """Random dataset factory: labels drawn from the raw scores, K random groups."""

    def _make(rng, n=500, k=2, m=None, rate=0.4, shift=0.0):
        scores = rng.uniform(0.02, 0.98, size=n)
        p = np.clip(scores + shift, 0.0, 1.0)
        labels = (rng.random(n) < p).astype(int)
        if m is not None:
            scores = Grid(m).round(scores)
        membership = rng.random((n, k)) < rate
        names = [f"g{i}" for i in range(k)]
        return validate_dataset(scores, labels, membership, names)

    return _make
