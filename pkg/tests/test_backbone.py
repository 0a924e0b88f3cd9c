"""
Tests for the executable toy encoder and its configuration.
"""
import os
import sys

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.backbone import BackboneConfig, ToyBackbone, check_input_size, forward_toy
from src.errors import ConfigurationError, DimensionError
from src.tensor import Tensor


@pytest.mark.unit
class TestBackboneConfig:
    """Validation of the encoder layout"""

    def test_defaults(self):
        """Test the default three-stage layout"""
        cfg = BackboneConfig()
        assert cfg.stage_channels == [32, 48, 64]
        assert cfg.input_size == (64, 64)

    @pytest.mark.negative
    @pytest.mark.parametrize("size", [(48, 64), (64, 100), (16, 16)])
    def test_input_size_must_be_multiple_of_32(self, size):
        """Test that sizes not divisible by 32 are rejected"""
        with pytest.raises(ValidationError):
            BackboneConfig(input_size=size)

    @pytest.mark.negative
    def test_stage_lists_need_three_positive_entries(self):
        """Test list length and positivity checks"""
        with pytest.raises(ValidationError):
            BackboneConfig(stage_channels=[8, 8])
        with pytest.raises(ValidationError):
            BackboneConfig(blocks_per_stage=[1, 0, 1])

    @pytest.mark.negative
    def test_unknown_field_rejected(self):
        """Test extra='forbid'"""
        with pytest.raises(ValidationError):
            BackboneConfig(depth=50)


@pytest.mark.unit
class TestForwardToy:
    """Shapes and failure modes of the toy encoder"""

    def test_feature_shapes_at_64(self, tiny_backbone_config, rng):
        """Test that a 64x64 image gives 8x8, 4x4 and 2x2 maps"""
        image = Tensor(rng.standard_normal((2, 3, 64, 64)).astype(np.float32))
        features = forward_toy(tiny_backbone_config, image)
        assert features.f8.shape == (2, 4, 8, 8)
        assert features.f16.shape == (2, 6, 4, 4)
        assert features.f32.shape == (2, 8, 2, 2)
        assert features.channels == (4, 6, 8)

    def test_feature_shapes_at_512(self, rng):
        """Test that a 512x512 image gives a 16x16 OS=32 map"""
        cfg = BackboneConfig(stem_channels=2, stage_channels=[2, 2, 3], input_size=(512, 512))
        features = forward_toy(cfg, Tensor(rng.random((1, 3, 512, 512)).astype(np.float32)))
        assert features.f8.shape[2:] == (64, 64)
        assert features.f16.shape[2:] == (32, 32)
        assert features.f32.shape == (1, 3, 16, 16)

    def test_extra_blocks_keep_resolution(self, rng):
        """Test that stride-1 blocks do not change spatial size"""
        cfg = BackboneConfig(stem_channels=2, stage_channels=[3, 3, 3], blocks_per_stage=[2, 3, 1])
        backbone = ToyBackbone.initialize(cfg, rng)
        assert [len(stage) for stage in backbone.stages] == [2, 3, 1]
        features = backbone(Tensor(rng.random((1, 3, 64, 64)).astype(np.float32)))
        assert features.f16.shape == (1, 3, 4, 4)

    def test_same_seed_same_output(self, tiny_backbone_config, rng):
        """Test deterministic seed-0 initialization"""
        image = Tensor(rng.random((1, 3, 64, 64)).astype(np.float32))
        a = forward_toy(tiny_backbone_config, image).f32.data
        b = forward_toy(tiny_backbone_config, image).f32.data
        np.testing.assert_array_equal(a, b)

    def test_parameter_names(self, tiny_backbone_config):
        """Test the stem/stage naming used by the weight file"""
        names = [name for name, _ in ToyBackbone.initialize(tiny_backbone_config).named_parameters()]
        assert "backbone.stem.0.weight" in names
        assert "backbone.stage3.0.bn.gamma" in names
        buffers = [name for name, _ in ToyBackbone.initialize(tiny_backbone_config).named_buffers()]
        assert "backbone.stage1.0.bn.running_var" in buffers

    @pytest.mark.negative
    @pytest.mark.parametrize("size", [(70, 64), (64, 48)])
    def test_indivisible_image_rejected(self, tiny_backbone_config, size):
        """Test that H or W not divisible by 32 raises ConfigurationError"""
        image = Tensor(np.zeros((1, 3) + size, dtype=np.float32))
        with pytest.raises(ConfigurationError):
            forward_toy(tiny_backbone_config, image)

    @pytest.mark.negative
    def test_size_mismatch_rejected(self, tiny_backbone_config):
        """Test that a divisible image of another size raises ConfigurationError"""
        with pytest.raises(ConfigurationError):
            forward_toy(tiny_backbone_config, Tensor(np.zeros((1, 3, 96, 96), dtype=np.float32)))

    @pytest.mark.negative
    def test_channel_count_checked(self, tiny_backbone_config):
        """Test that a non-RGB image raises DimensionError"""
        backbone = ToyBackbone.initialize(tiny_backbone_config)
        with pytest.raises(DimensionError):
            backbone(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))

    @pytest.mark.edge
    def test_check_input_size_accepts_32(self):
        """Test the smallest valid size"""
        check_input_size(32, 32)
