import numpy as np
import pytest

from dirlatent.config import NetConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_net():
    """Smallest configuration that still exercises every layer type."""
    return NetConfig(input_hw=(8, 8), downsample_stages=2, residual_blocks=2,
                     transformer_pairs=1, heads=2, d=4, n_codes=5, window=3, base_channels=2)


@pytest.fixture
def tiny_train(tiny_net):
    """Training configuration small enough to run many steps in a second."""
    from dirlatent.config import TrainConfig

    return TrainConfig(steps=10, n_train_clips=3, n_val_clips=2, clip_len=4, net=tiny_net)
