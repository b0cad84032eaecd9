import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("ddsra", max_examples=60, deadline=None)
settings.load_profile("ddsra")


@pytest.fixture(scope="session")
def env():
    from ddsra.env_model import default_environment

    return default_environment(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
