"""
Holistically-Guided Decoder
Multi-scale feature fusion, holistic codebook generation and codeword
assembly, producing the OS=8 feature used for the segmentation mask.

Shapes for an H x W image with n codewords and D basis channels:
    m32: (N, compress * |m32_scales|, H/32, W/32)
    m8:  (N, compress * |m8_scales|, H/8, W/8)
    A, A_tilde: (N, n, H/32, W/32); B: (N, D, H/32, W/32); C: (N, D, n)
    G, W: (N, guidance, H/8, W/8), (N, n, H/8, W/8)
    f8_tilde: (N, D, H/8, W/8); f8_hat: (N, D + guidance, H/8, W/8)
"""
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src import functional as F
from src.backbone import EncoderFeatures
from src.errors import ConfigurationError, DimensionError
from src.layers import Conv1x1Params, conv1x1
from src.tensor import DEFAULT_DTYPE, Tensor

SCALES = (8, 16, 32)


class HGDConfig(BaseModel):
    """Decoder widths, fusion scale subsets and the codeword-transfer switch"""
    model_config = ConfigDict(extra="forbid")

    n_codewords: int = Field(default=256, ge=1)
    compress_channels: int = Field(default=512, ge=1)
    basis_channels: int = Field(default=1024, ge=1)
    guidance_channels: int = Field(default=1024, ge=1)
    m32_scales: List[int] = Field(default_factory=lambda: list(SCALES))
    m8_scales: List[int] = Field(default_factory=lambda: list(SCALES))
    codeword_transfer: bool = True
    n_classes: int = Field(default=60, ge=1)

    @field_validator("m32_scales", "m8_scales")
    @classmethod
    def _known_scales(cls, scales: List[int]) -> List[int]:
        if not scales or any(s not in SCALES for s in scales) or len(set(scales)) != len(scales):
            raise ValueError(f"scales must be distinct values from {SCALES}, got {scales}")
        return sorted(scales)

    @model_validator(mode="after")
    def _anchor_scales(self) -> "HGDConfig":
        check_scales(self)
        if self.codeword_transfer and self.basis_channels != self.guidance_channels:
            raise ValueError(f"codeword_transfer requires basis_channels == guidance_channels, "
                             f"got {self.basis_channels} and {self.guidance_channels}")
        return self

    @property
    def used_scales(self) -> List[int]:
        return sorted(set(self.m32_scales) | set(self.m8_scales))


def check_scales(cfg: HGDConfig) -> None:
    """
    Raises:
        ConfigurationError: if 32 is missing from m32_scales or 8 from m8_scales.
    """
    if 32 not in cfg.m32_scales:
        raise ConfigurationError(f"m32_scales must contain 32, got {cfg.m32_scales}")
    if 8 not in cfg.m8_scales:
        raise ConfigurationError(f"m8_scales must contain 8, got {cfg.m8_scales}")


@dataclass
class FusionBundle:
    """Compressed per-scale maps (None for scales the config does not use) and the fused maps"""
    e8: Optional[Tensor]
    e16: Optional[Tensor]
    e32: Optional[Tensor]
    m32: Tensor
    m8: Tensor


@dataclass
class Codebook:
    A: Tensor
    A_tilde: Tensor
    B: Tensor
    B_bar: Tensor
    C: Tensor


@dataclass
class AssemblyResult:
    G: Tensor
    G_bar: Tensor
    W: Tensor
    f8_tilde: Tensor
    f8_hat: Tensor


@dataclass
class HGDParams:
    """
    Decoder parameters. Compression, basis and guidance convs are conv/BN/ReLU
    without bias; attention, assembly-weight and classifier convs are linear
    with bias.
    """
    compress: Dict[int, Conv1x1Params]
    basis: Conv1x1Params
    attention: Conv1x1Params
    guidance: Conv1x1Params
    assembly_weights: Conv1x1Params
    classifier: Conv1x1Params

    @classmethod
    def initialize(cls, cfg: HGDConfig, in_channels: Sequence[int], rng: Optional[np.random.Generator] = None,
                   dtype=DEFAULT_DTYPE) -> "HGDParams":
        """
        Args:
            cfg: Decoder configuration.
            in_channels: Encoder channels at strides 8, 16, 32.
            rng: Generator for the fan-in scaled Gaussian weights.
        """
        check_scales(cfg)
        rng = rng if rng is not None else np.random.default_rng(0)
        channels = dict(zip(SCALES, in_channels))
        compress = {s: Conv1x1Params.initialize(channels[s], cfg.compress_channels, rng, with_bn_relu=True,
                                                dtype=dtype)
                    for s in cfg.used_scales}
        m32_channels = cfg.compress_channels * len(cfg.m32_scales)
        m8_channels = cfg.compress_channels * len(cfg.m8_scales)
        return cls(
            compress=compress,
            basis=Conv1x1Params.initialize(m32_channels, cfg.basis_channels, rng, with_bn_relu=True, dtype=dtype),
            attention=Conv1x1Params.initialize(m32_channels, cfg.n_codewords, rng, bias=True, dtype=dtype),
            guidance=Conv1x1Params.initialize(m8_channels, cfg.guidance_channels, rng, with_bn_relu=True,
                                              dtype=dtype),
            assembly_weights=Conv1x1Params.initialize(cfg.guidance_channels, cfg.n_codewords, rng, bias=True,
                                                      dtype=dtype),
            classifier=Conv1x1Params.initialize(cfg.basis_channels + cfg.guidance_channels, cfg.n_classes, rng,
                                                bias=True, dtype=dtype),
        )

    def _modules(self) -> Iterator[Tuple[str, Conv1x1Params]]:
        for scale in sorted(self.compress):
            yield f"compress{scale}", self.compress[scale]
        yield "basis", self.basis
        yield "attention", self.attention
        yield "guidance", self.guidance
        yield "assembly_weights", self.assembly_weights
        yield "classifier", self.classifier

    def named_parameters(self, prefix: str = "hgd") -> Iterator[Tuple[str, Tensor]]:
        for name, module in self._modules():
            yield from module.named_parameters(f"{prefix}.{name}")

    def named_buffers(self, prefix: str = "hgd") -> Iterator[Tuple[str, np.ndarray]]:
        for name, module in self._modules():
            yield from module.named_buffers(f"{prefix}.{name}")


def fuse(features: EncoderFeatures, cfg: HGDConfig, params: HGDParams, training: bool = False) -> FusionBundle:
    """
    Compress each encoder map to cfg.compress_channels and build the fused maps:
    m32 resizes the m32_scales maps to OS=32, m8 resizes the m8_scales maps to
    OS=8; both concatenate in scale order (8, 16, 32).

    Raises:
        ConfigurationError: if an anchor scale is missing.
        DimensionError: if the three maps are not at strides 8/16/32 of one image.
    """
    check_scales(cfg)
    maps = features.as_dict()
    h8, w8 = maps[8].shape[2], maps[8].shape[3]
    for scale in (16, 32):
        factor = scale // 8
        if (maps[scale].shape[2] * factor, maps[scale].shape[3] * factor) != (h8, w8):
            raise DimensionError("fuse", maps[8].shape, maps[scale].shape,
                                 detail=f"OS={scale} map must be 1/{factor} of the OS=8 map")
    h32, w32 = maps[32].shape[2], maps[32].shape[3]

    compressed = {s: conv1x1(maps[s], params.compress[s], training=training) for s in cfg.used_scales}
    m32 = F.concat_channels([F.bilinear_resize(compressed[s], h32, w32) for s in cfg.m32_scales])
    m8 = F.concat_channels([F.bilinear_resize(compressed[s], h8, w8) for s in cfg.m8_scales])
    return FusionBundle(e8=compressed.get(8), e16=compressed.get(16), e32=compressed.get(32), m32=m32, m8=m8)


def build_codebook(m32: Tensor, cfg: HGDConfig, params: HGDParams, training: bool = False) -> Codebook:
    """Basis map B, weighting logits A, normalized maps, codewords C and the mean basis vector"""
    expected = cfg.compress_channels * len(cfg.m32_scales)
    if m32.ndim != 4 or m32.shape[1] != expected:
        raise DimensionError("build_codebook", m32.shape, (expected,), detail="m32 channels must match m32_scales")
    basis = conv1x1(m32, params.basis, training=training)
    logits = conv1x1(m32, params.attention, training=training)
    normalized = F.softmax_spatial(logits)
    codewords = F.weighted_pool(basis, normalized)
    return Codebook(A=logits, A_tilde=normalized, B=basis, B_bar=F.global_avg(basis), C=codewords)


def assemble_features(m8: Tensor, cb: Codebook, cfg: HGDConfig, params: HGDParams,
                      training: bool = False) -> AssemblyResult:
    """
    Guidance G from m8, optional codeword transfer G + mean(B), per-location
    assembly weights W, f8_tilde = W^T C and f8_hat = [f8_tilde; G].
    """
    guidance = conv1x1(m8, params.guidance, training=training)
    transferred = F.add_broadcast(guidance, cb.B_bar) if cfg.codeword_transfer else guidance
    weights = conv1x1(transferred, params.assembly_weights, training=training)
    if weights.shape[1] != cb.C.shape[2]:
        raise DimensionError("assemble_features", weights.shape, cb.C.shape,
                             detail="W channels must equal the codeword count")
    f8_tilde = F.assemble(weights, cb.C)
    f8_hat = F.concat_channels([f8_tilde, guidance])
    return AssemblyResult(G=guidance, G_bar=transferred, W=weights, f8_tilde=f8_tilde, f8_hat=f8_hat)


def predict_mask(f8_hat: Tensor, cfg: HGDConfig, params: HGDParams, out_size: Tuple[int, int]) -> Tensor:
    """1x1 classifier at OS=8, then bilinear upsampling to out_size"""
    out_h, out_w = int(out_size[0]), int(out_size[1])
    if (out_h, out_w) != (8 * f8_hat.shape[2], 8 * f8_hat.shape[3]):
        raise DimensionError("predict_mask", f8_hat.shape, (out_h, out_w),
                             detail="output size must be 8x the OS=8 feature size")
    logits = conv1x1(f8_hat, params.classifier)
    return F.bilinear_resize(logits, out_h, out_w)


def hgd_forward(features: EncoderFeatures, cfg: HGDConfig, params: HGDParams, out_size: Tuple[int, int],
                training: bool = False) -> Tuple[Tensor, Codebook, AssemblyResult]:
    bundle = fuse(features, cfg, params, training=training)
    codebook = build_codebook(bundle.m32, cfg, params, training=training)
    assembly = assemble_features(bundle.m8, codebook, cfg, params, training=training)
    logits = predict_mask(assembly.f8_hat, cfg, params, out_size)
    return logits, codebook, assembly
