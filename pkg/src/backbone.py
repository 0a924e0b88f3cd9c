"""
Toy Encoder Backbone
Small strided 3x3 conv/BN/ReLU network producing feature maps at output
strides 8, 16 and 32. Stands in for ResNet101 during execution; the exact
ResNet101 description used for cost accounting lives in src.arch_graph.
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.errors import ConfigurationError, DimensionError
from src.layers import Conv2dParams
from src.tensor import Tensor

OUTPUT_STRIDES = (8, 16, 32)


class BackboneConfig(BaseModel):
    """Channel and depth layout of the toy encoder"""
    model_config = ConfigDict(extra="forbid")

    stage_channels: List[int] = Field(default_factory=lambda: [32, 48, 64], min_length=3, max_length=3)
    blocks_per_stage: List[int] = Field(default_factory=lambda: [1, 1, 1], min_length=3, max_length=3)
    stem_channels: int = Field(default=16, ge=1)
    input_size: Tuple[int, int] = (64, 64)

    @field_validator("stage_channels", "blocks_per_stage")
    @classmethod
    def _positive(cls, values: List[int]) -> List[int]:
        if any(v < 1 for v in values):
            raise ValueError(f"all entries must be >= 1, got {values}")
        return values

    @field_validator("input_size")
    @classmethod
    def _divisible_by_32(cls, size: Tuple[int, int]) -> Tuple[int, int]:
        if size[0] < 32 or size[1] < 32 or size[0] % 32 or size[1] % 32:
            raise ValueError(f"input_size must be positive multiples of 32, got {size}")
        return size


@dataclass
class EncoderFeatures:
    """Encoder outputs at output strides 8, 16 and 32"""
    f8: Tensor
    f16: Tensor
    f32: Tensor

    def as_dict(self) -> Dict[int, Tensor]:
        return {8: self.f8, 16: self.f16, 32: self.f32}

    @property
    def channels(self) -> Tuple[int, int, int]:
        return self.f8.shape[1], self.f16.shape[1], self.f32.shape[1]


def check_input_size(height: int, width: int) -> None:
    if height < 32 or width < 32 or height % 32 or width % 32:
        raise ConfigurationError(f"Input size {height}x{width} is not divisible by 32")


class ToyBackbone:
    """
    Stem: two stride-2 3x3 convs (OS=4). Each of the three stages starts with a
    stride-2 3x3 conv and adds blocks_per_stage - 1 stride-1 3x3 convs.
    """

    def __init__(self, cfg: BackboneConfig, stem: List[Conv2dParams], stages: List[List[Conv2dParams]]):
        self.cfg = cfg
        self.stem = stem
        self.stages = stages

    @classmethod
    def initialize(cls, cfg: BackboneConfig, rng: Optional[np.random.Generator] = None) -> "ToyBackbone":
        rng = rng if rng is not None else np.random.default_rng(0)
        stem = [
            Conv2dParams.initialize(3, cfg.stem_channels, 3, rng, stride=2),
            Conv2dParams.initialize(cfg.stem_channels, cfg.stem_channels, 3, rng, stride=2),
        ]
        stages = []
        c_in = cfg.stem_channels
        for c_out, blocks in zip(cfg.stage_channels, cfg.blocks_per_stage):
            layers = [Conv2dParams.initialize(c_in, c_out, 3, rng, stride=2)]
            layers += [Conv2dParams.initialize(c_out, c_out, 3, rng) for _ in range(blocks - 1)]
            stages.append(layers)
            c_in = c_out
        return cls(cfg, stem, stages)

    def __call__(self, image: Tensor, training: bool = False) -> EncoderFeatures:
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError("forward_toy", image.shape, detail="expected an (N, 3, H, W) image")
        check_input_size(image.shape[2], image.shape[3])
        x = image
        for layer in self.stem:
            x = layer(x, training=training)
        outputs = []
        for stage in self.stages:
            for layer in stage:
                x = layer(x, training=training)
            outputs.append(x)
        return EncoderFeatures(*outputs)

    def named_parameters(self, prefix: str = "backbone") -> Iterator[Tuple[str, Tensor]]:
        for i, layer in enumerate(self.stem):
            yield from layer.named_parameters(f"{prefix}.stem.{i}")
        for s, stage in enumerate(self.stages):
            for b, layer in enumerate(stage):
                yield from layer.named_parameters(f"{prefix}.stage{s + 1}.{b}")

    def named_buffers(self, prefix: str = "backbone") -> Iterator[Tuple[str, np.ndarray]]:
        for i, layer in enumerate(self.stem):
            yield from layer.named_buffers(f"{prefix}.stem.{i}")
        for s, stage in enumerate(self.stages):
            for b, layer in enumerate(stage):
                yield from layer.named_buffers(f"{prefix}.stage{s + 1}.{b}")


def forward_toy(cfg: BackboneConfig, image: Tensor, backbone: Optional[ToyBackbone] = None,
                training: bool = False) -> EncoderFeatures:
    """
    Run the toy encoder on an image of the configured size.

    Args:
        cfg: Backbone layout; image must be cfg.input_size.
        image: (N, 3, H, W) tensor.
        backbone: Parameters to use; a seed-0 initialization when omitted.
        training: Use batch statistics in batch norm (and update running estimates).

    Returns:
        EncoderFeatures at strides 8, 16, 32.

    Raises:
        ConfigurationError: if H or W is not divisible by 32 or differs from cfg.input_size.
    """
    height, width = image.shape[2], image.shape[3]
    check_input_size(height, width)
    if (height, width) != tuple(cfg.input_size):
        raise ConfigurationError(f"Image size {height}x{width} does not match configured {cfg.input_size}")
    backbone = backbone if backbone is not None else ToyBackbone.initialize(cfg)
    return backbone(image, training=training)
