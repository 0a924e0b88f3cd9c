"""
Parameter containers for the convolutional layers of the toy model.
"""
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from src import functional as F
from src.tensor import DEFAULT_DTYPE, Tensor


def he_normal(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Fan-in scaled Gaussian, std = sqrt(2 / fan_in)"""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class BatchNormParams:
    """Affine batch-norm parameters plus running estimates"""
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def initialize(cls, channels: int, dtype=DEFAULT_DTYPE) -> "BatchNormParams":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=training, momentum=self.momentum, eps=self.eps)

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var


@dataclass
class Conv1x1Params:
    """
    1x1 convolution weight (C_out, C_in), optional bias (C_out) and an optional
    batch-norm + ReLU tail.
    """
    weight: Tensor
    bias: Optional[Tensor] = None
    with_bn_relu: bool = False
    bn: Optional[BatchNormParams] = None

    def __post_init__(self):
        if self.with_bn_relu and self.bn is None:
            self.bn = BatchNormParams.initialize(self.c_out, dtype=self.weight.dtype)

    @classmethod
    def initialize(cls, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = False,
                   with_bn_relu: bool = False, dtype=DEFAULT_DTYPE) -> "Conv1x1Params":
        weight = Tensor(he_normal((c_out, c_in), c_in, rng, dtype), requires_grad=True)
        bias_tensor = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        return cls(weight=weight, bias=bias_tensor, with_bn_relu=with_bn_relu)

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias
        if self.bn is not None:
            yield from self.bn.named_parameters(f"{prefix}.bn")

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        if self.bn is not None:
            yield from self.bn.named_buffers(f"{prefix}.bn")


def conv1x1(x: Tensor, p: Conv1x1Params, training: bool = False) -> Tensor:
    """
    1x1 convolution, then batch normalization and ReLU when p.with_bn_relu.

    Raises:
        DimensionError: if x's channel count differs from p.c_in.
    """
    out = F.linear1x1(x, p.weight, p.bias)
    if p.with_bn_relu:
        out = F.relu(p.bn(out, training=training))
    return out


@dataclass
class Conv2dParams:
    """k x k convolution followed by batch norm and ReLU (toy backbone unit)"""
    weight: Tensor
    stride: int = 1
    padding: int = 1
    dilation: int = 1
    bn: Optional[BatchNormParams] = None

    @classmethod
    def initialize(cls, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                   dilation: int = 1, dtype=DEFAULT_DTYPE) -> "Conv2dParams":
        fan_in = c_in * kernel * kernel
        weight = Tensor(he_normal((c_out, c_in, kernel, kernel), fan_in, rng, dtype), requires_grad=True)
        return cls(weight=weight, stride=stride, padding=dilation * (kernel - 1) // 2, dilation=dilation,
                   bn=BatchNormParams.initialize(c_out, dtype=dtype))

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        out = F.conv2d(x, self.weight, stride=self.stride, padding=self.padding, dilation=self.dilation)
        if self.bn is not None:
            out = F.relu(self.bn(out, training=training))
        return out

    def named_parameters(self, prefix: str) -> Iterator[Tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        if self.bn is not None:
            yield from self.bn.named_parameters(f"{prefix}.bn")

    def named_buffers(self, prefix: str) -> Iterator[Tuple[str, np.ndarray]]:
        if self.bn is not None:
            yield from self.bn.named_buffers(f"{prefix}.bn")
