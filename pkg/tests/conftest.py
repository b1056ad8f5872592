import pytest

from apnet.data import SyntheticConfig, generate_synthetic


@pytest.fixture
def synth_small():
    return generate_synthetic(SyntheticConfig(n_seen=8, n_unseen=3, attr_dim=6, image_dim=8, images_per_class=12, seed=1))
