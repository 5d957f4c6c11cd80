import numpy as np
import pytest
from hypothesis import settings

from deltaflow.dataset import SynthConfig, generate_synthetic

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(SynthConfig(days=30), seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
