import numpy as np
import pytest

from hingenet import net


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_residual_arch(channels=(4, 6), input_channels=1, size=8, classes=3):
    blocks = (net.BlockDef("basic", channels[0], 1),
              net.BlockDef("basic", channels[1], 2))
    return net.ArchSpec(input_channels, size, size, classes, channels[0], blocks)


def small_plain_arch(channels=(5, 4), input_channels=2, size=8, classes=3):
    blocks = tuple(net.BlockDef("plain", c) for c in channels)
    return net.ArchSpec(input_channels, size, size, classes, channels[0], blocks)
