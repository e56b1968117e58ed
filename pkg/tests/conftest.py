import numpy as np
import pytest

from ictus.attention import AttentionConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return AttentionConfig(blocks=2, heads=2, spatial_dim=4, temporal_dim=5)
