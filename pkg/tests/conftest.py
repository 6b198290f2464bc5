import numpy as np
import pytest

from lvpnet.model import CodecConfig, LVPNet


@pytest.fixture(scope="session")
def small_model():
    """Untrained codec with a shallow compensation trunk (cheap to run)."""
    return LVPNet(CodecConfig(qcm_blocks=2, predictor_channels=8, init_seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
