"""
Toy Training Harness
Poly learning-rate schedule, SGD with momentum and weight decay, flip/scale/crop
augmentation and the training loop for the EfficientFCN toy model.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from src import functional as F
from src.backbone import BackboneConfig
from src.errors import DataValidationError, DimensionError, TrainingDivergedError
from src.hgd_decoder import HGDConfig
from src.inference import resize_array
from src.metric_log import MetricLog
from src.metrics import SegMetrics, compute_metrics
from src.model import EfficientFCN
from src.synthetic_dataset import NUM_CLASSES, SyntheticShapes
from src.tensor import Tensor


class TrainConfig(BaseModel):
    """Optimizer, schedule, augmentation and logging settings"""
    model_config = ConfigDict(extra="forbid")

    base_lr: float = Field(default=0.01, gt=0)
    power: float = Field(default=0.9, gt=0, le=1)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    max_iters: int = Field(default=2000, ge=1)
    crop: Tuple[int, int] = (128, 128)
    scale_range: Tuple[float, float] = (0.5, 2.0)
    flip_prob: float = Field(default=0.5, ge=0, le=1)
    seed: int = 0
    batch_size: int = Field(default=4, ge=1)
    eval_interval: int = Field(default=100, ge=1)
    num_images: int = Field(default=50, ge=1)

    @field_validator("scale_range")
    @classmethod
    def _ordered(cls, bounds: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < bounds[0] <= bounds[1]:
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {bounds}")
        return bounds

    @field_validator("crop")
    @classmethod
    def _crop_divisible(cls, crop: Tuple[int, int]) -> Tuple[int, int]:
        if crop[0] < 32 or crop[1] < 32 or crop[0] % 32 or crop[1] % 32:
            raise ValueError(f"crop must be positive multiples of 32, got {crop}")
        return crop


def poly_lr(iteration: int, cfg: TrainConfig) -> float:
    """
    base_lr * (1 - iteration / max_iters) ** power

    Raises:
        DataValidationError: if iteration is outside [0, max_iters].
    """
    if not 0 <= iteration <= cfg.max_iters:
        raise DataValidationError(f"Iteration {iteration} outside [0, {cfg.max_iters}]")
    return cfg.base_lr * (1.0 - iteration / cfg.max_iters) ** cfg.power


def sgd_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], lr: float, cfg: TrainConfig,
             state: Optional[List[np.ndarray]] = None) -> List[np.ndarray]:
    """
    In-place update: v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.

    Args:
        params: Tensors to update.
        grads: One gradient per tensor (None counts as zero).
        lr: Step size.
        cfg: Supplies momentum and weight_decay.
        state: Velocities from the previous step; zeros when omitted.

    Returns:
        The updated velocities.

    Raises:
        DimensionError: if counts or shapes disagree.
    """
    if len(params) != len(grads):
        raise DimensionError("sgd_step", (len(params),), (len(grads),), detail="one gradient per parameter")
    if state is None:
        state = [np.zeros_like(p.data) for p in params]
    velocities = []
    for param, grad, velocity in zip(params, grads, state):
        grad = np.zeros_like(param.data) if grad is None else np.asarray(grad)
        if grad.shape != param.data.shape or velocity.shape != param.data.shape:
            raise DimensionError("sgd_step", param.shape, grad.shape)
        velocity = cfg.momentum * velocity + grad + cfg.weight_decay * param.data
        param.data -= (lr * velocity).astype(param.data.dtype)
        velocities.append(velocity.astype(param.data.dtype))
    return velocities


class SGD:
    """Momentum SGD over a fixed parameter list, keeping its own velocities"""

    def __init__(self, params: Sequence[Tensor], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state: Optional[List[np.ndarray]] = None

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self, lr: float) -> None:
        self.state = sgd_step(self.params, [p.grad for p in self.params], lr, self.cfg, self.state)


def resize_labels(label: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of an (H, W) label map with half-pixel centres"""
    h, w = label.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return label[rows[:, None], cols[None, :]]


def augment(image: np.ndarray, label: np.ndarray, cfg: TrainConfig,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Random horizontal flip, random rescale within cfg.scale_range, then a random
    crop to cfg.crop; regions outside the rescaled image are zero in the image
    and ignore_index in the label.
    """
    if rng.random() < cfg.flip_prob:
        image = image[:, :, ::-1]
        label = label[:, ::-1]
    scale = rng.uniform(*cfg.scale_range)
    h = max(1, int(round(image.shape[1] * scale)))
    w = max(1, int(round(image.shape[2] * scale)))
    image = resize_array(np.ascontiguousarray(image)[None], h, w)[0]
    label = resize_labels(np.ascontiguousarray(label), h, w)

    crop_h, crop_w = cfg.crop
    pad_h, pad_w = max(crop_h - h, 0), max(crop_w - w, 0)
    if pad_h or pad_w:
        image = np.pad(image, ((0, 0), (0, pad_h), (0, pad_w)))
        label = np.pad(label, ((0, pad_h), (0, pad_w)), constant_values=F.IGNORE_INDEX)
    top = int(rng.integers(0, image.shape[1] - crop_h + 1))
    left = int(rng.integers(0, image.shape[2] - crop_w + 1))
    return (np.ascontiguousarray(image[:, top:top + crop_h, left:left + crop_w]),
            np.ascontiguousarray(label[top:top + crop_h, left:left + crop_w]))


def evaluate(model: EfficientFCN, images: np.ndarray, labels: np.ndarray, num_classes: int) -> SegMetrics:
    """Single-scale evaluation-mode metrics over a batch"""
    logits = model.predict_logits(images)
    return compute_metrics(F.argmax_mask(logits), labels, num_classes)


def toy_backbone_config(crop: Tuple[int, int]) -> BackboneConfig:
    """Encoder used by the shipped synthetic-shapes run (configs/toy_training.json)"""
    return BackboneConfig(stem_channels=16, stage_channels=[32, 64, 96], blocks_per_stage=[2, 1, 1], input_size=crop)


def toy_hgd_config() -> HGDConfig:
    return HGDConfig(n_codewords=32, compress_channels=48, basis_channels=96, guidance_channels=96,
                     n_classes=NUM_CLASSES)


@dataclass
class TrainResult:
    model: EfficientFCN
    history: List[Dict[str, float]] = field(default_factory=list)
    final_metrics: Optional[SegMetrics] = None


def train_toy(cfg: TrainConfig, dataset: Optional[SyntheticShapes] = None,
              backbone_cfg: Optional[BackboneConfig] = None, hgd_cfg: Optional[HGDConfig] = None,
              log_path: Optional[str] = None, quiet: bool = False,
              model: Optional[EfficientFCN] = None) -> TrainResult:
    """
    Train the toy EfficientFCN with poly-LR momentum SGD on augmented synthetic crops.

    Every cfg.eval_interval iterations (and after the last one) the model is
    evaluated on the un-augmented dataset and a record
    {iteration, lr, loss, pix_acc, mean_iou} is appended to the history and,
    when log_path is given, to the JSON-lines metric log.

    Raises:
        TrainingDivergedError: when the loss becomes NaN or infinite.
    """
    dataset = dataset if dataset is not None else SyntheticShapes(cfg.num_images, cfg.crop, seed=cfg.seed)
    backbone_cfg = backbone_cfg if backbone_cfg is not None else toy_backbone_config(cfg.crop)
    hgd_cfg = hgd_cfg if hgd_cfg is not None else toy_hgd_config()
    model = model if model is not None else EfficientFCN.initialize(backbone_cfg, hgd_cfg, seed=cfg.seed)
    optimizer = SGD(model.parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    log = MetricLog(log_path, quiet=quiet) if log_path else None
    if log is not None:
        log.reset()

    eval_images, eval_labels = dataset.as_arrays()
    result = TrainResult(model=model)
    loss_value = float("nan")
    for iteration in range(cfg.max_iters):
        indices = rng.integers(0, len(dataset), size=cfg.batch_size)
        crops = [augment(*dataset[int(i)], cfg, rng) for i in indices]
        images = Tensor(np.stack([c[0] for c in crops]))
        labels = np.stack([c[1] for c in crops])

        optimizer.zero_grad()
        loss = F.cross_entropy_mask(model.forward(images, training=True), labels)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(iteration, loss_value)
        loss.backward()
        lr = poly_lr(iteration, cfg)
        optimizer.step(lr)

        if (iteration + 1) % cfg.eval_interval == 0 or iteration + 1 == cfg.max_iters:
            metrics = evaluate(model, eval_images, eval_labels, hgd_cfg.n_classes)
            record = {"iteration": iteration + 1, "lr": lr, "loss": loss_value,
                      "pix_acc": metrics.pix_acc, "mean_iou": metrics.mean_iou}
            result.history.append(record)
            result.final_metrics = metrics
            if log is not None:
                log.append(record)
            if not quiet:
                print(f"📊 iter {iteration + 1}/{cfg.max_iters} loss={loss_value:.4f} "
                      f"pixAcc={metrics.pix_acc:.4f} mIoU={metrics.mean_iou:.4f} lr={lr:.2e}")
    if not quiet:
        print(f"✅ Training finished after {cfg.max_iters} iterations")
    return result
