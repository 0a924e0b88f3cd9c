"""
EfficientFCN toy model: toy encoder followed by the holistically-guided decoder.
"""
from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.backbone import BackboneConfig, ToyBackbone
from src.errors import ConfigurationError, DimensionError
from src.hgd_decoder import AssemblyResult, Codebook, HGDConfig, HGDParams, hgd_forward
from src.tensor import DEFAULT_DTYPE, Tensor


class EfficientFCN:
    """
    Segmentation network whose parameters are exposed by name for the optimizer
    and the weight file format.
    """

    def __init__(self, backbone_cfg: BackboneConfig, hgd_cfg: HGDConfig, backbone: ToyBackbone,
                 decoder: HGDParams):
        self.backbone_cfg = backbone_cfg
        self.hgd_cfg = hgd_cfg
        self.backbone = backbone
        self.decoder = decoder

    @classmethod
    def initialize(cls, backbone_cfg: BackboneConfig, hgd_cfg: HGDConfig, seed: int = 0,
                   dtype=DEFAULT_DTYPE) -> "EfficientFCN":
        rng = np.random.default_rng(seed)
        backbone = ToyBackbone.initialize(backbone_cfg, rng)
        decoder = HGDParams.initialize(hgd_cfg, backbone_cfg.stage_channels, rng, dtype=dtype)
        return cls(backbone_cfg, hgd_cfg, backbone, decoder)

    def forward_full(self, image: Tensor, training: bool = False) -> Tuple[Tensor, Codebook, AssemblyResult]:
        features = self.backbone(image, training=training)
        return hgd_forward(features, self.hgd_cfg, self.decoder, (image.shape[2], image.shape[3]),
                           training=training)

    def forward(self, image: Tensor, training: bool = False) -> Tensor:
        return self.forward_full(image, training=training)[0]

    __call__ = forward

    def predict_logits(self, images: np.ndarray) -> np.ndarray:
        """Evaluation-mode logits for an (N, 3, H, W) array"""
        return self.forward(Tensor(np.asarray(images, dtype=DEFAULT_DTYPE))).data

    def weighting_maps(self, image: np.ndarray) -> np.ndarray:
        """Normalized weighting maps, shape (N, n, H/32, W/32)"""
        _, codebook, _ = self.forward_full(Tensor(np.asarray(image, dtype=DEFAULT_DTYPE)))
        return codebook.A_tilde.data

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.backbone.named_parameters("backbone")
        yield from self.decoder.named_parameters("hgd")

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.backbone.named_buffers("backbone")
        yield from self.decoder.named_buffers("hgd")

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(tensor.data.size for tensor in self.parameters()))

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter and batch-norm running estimate"""
        state = {name: tensor.data.copy() for name, tensor in self.named_parameters()}
        state.update({name: buffer.copy() for name, buffer in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays into the model in place.

        Raises:
            ConfigurationError: if strict and names are missing or unexpected.
            DimensionError: if a stored shape differs from the model's.
        """
        targets: Dict[str, np.ndarray] = {name: tensor.data for name, tensor in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        if strict:
            missing = sorted(set(targets) - set(state))
            unexpected = sorted(set(state) - set(targets))
            if missing or unexpected:
                raise ConfigurationError(f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, value in state.items():
            if name not in targets:
                continue
            target = targets[name]
            value = np.asarray(value)
            if value.shape != target.shape:
                raise DimensionError(f"load_state_dict[{name}]", target.shape, value.shape)
            target[...] = value.astype(target.dtype)
