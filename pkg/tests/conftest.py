"""
Shared fixtures: small decoder configurations, float64 parameters and random
encoder features so numerical comparisons can use tight tolerances.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.backbone import BackboneConfig, EncoderFeatures
from src.hgd_decoder import HGDConfig, HGDParams
from src.tensor import Tensor


def random_features(rng, channels=(3, 4, 5), side=64, batch=1):
    """Encoder maps at strides 8/16/32 of a side x side image"""
    return EncoderFeatures(*[Tensor(rng.standard_normal((batch, c, side // s, side // s)))
                             for c, s in zip(channels, (8, 16, 32))])


def randomize_batch_norm(params, rng):
    """Non-trivial running statistics and affine terms so BN is not an identity"""
    for _, module in params._modules():
        if module.bn is not None:
            c = module.c_out
            module.bn.running_mean[...] = rng.standard_normal(c) * 0.1
            module.bn.running_var[...] = rng.uniform(0.5, 1.5, size=c)
            module.bn.beta.data[...] = rng.uniform(0.1, 0.5, size=c)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_hgd_config():
    return HGDConfig(n_codewords=4, compress_channels=4, basis_channels=6, guidance_channels=6, n_classes=3)


@pytest.fixture
def small_hgd_params(small_hgd_config, rng):
    params = HGDParams.initialize(small_hgd_config, (3, 4, 5), rng, dtype=np.float64)
    randomize_batch_norm(params, rng)
    return params


@pytest.fixture
def small_features(rng):
    return random_features(rng)


@pytest.fixture
def tiny_backbone_config():
    return BackboneConfig(stem_channels=4, stage_channels=[4, 6, 8], blocks_per_stage=[1, 1, 1],
                          input_size=(64, 64))


@pytest.fixture
def tiny_model_hgd_config():
    return HGDConfig(n_codewords=4, compress_channels=4, basis_channels=8, guidance_channels=8, n_classes=4)


@pytest.fixture
def make_features():
    return random_features


@pytest.fixture
def randomize_bn():
    return randomize_batch_norm
