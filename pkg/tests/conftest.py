import numpy as np
import pytest

from indextrack.synthetic import SynthConfig, generate


@pytest.fixture(scope="session")
def small_market():
    """A reduced synthetic market: 12 instruments over 700 days, two late listings."""
    cfg = SynthConfig(n_instruments=12, n_days=700, n_late_listings=2, seed=3)
    return generate(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
