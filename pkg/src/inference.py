"""
Multi-scale, optionally flipped, inference with probability averaging.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, Tuple

import numpy as np

from src import functional as F
from src.errors import DataValidationError, DimensionError
from src.metrics import SegMetrics, confusion_matrix, merge_confusions, metrics_from_confusion
from src.tensor import Tensor

EVAL_SCALES = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
SIZE_MULTIPLE = 32

ModelCallable = Callable[[np.ndarray], np.ndarray]


def resize_array(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel bilinear resize of an (N, C, H, W) array; a copy at equal size"""
    return F.bilinear_resize(Tensor(x), out_h, out_w).data


def pad_to_multiple(x: np.ndarray, multiple: int = SIZE_MULTIPLE) -> Tuple[np.ndarray, Tuple[int, int]]:
    """
    Zero-pad H and W symmetrically up to the next multiple.

    Returns:
        (padded array, (top, left) offsets of the original content)
    """
    h, w = x.shape[2], x.shape[3]
    ph = math.ceil(h / multiple) * multiple
    pw = math.ceil(w / multiple) * multiple
    if (ph, pw) == (h, w):
        return x, (0, 0)
    top, left = (ph - h) // 2, (pw - w) // 2
    padded = np.pad(x, ((0, 0), (0, 0), (top, ph - h - top), (left, pw - w - left)))
    return padded, (top, left)


def crop_to_content(x: np.ndarray, offsets: Tuple[int, int], size: Tuple[int, int], stride: int = 1) -> np.ndarray:
    """Cut the cells of a stride-s map of a padded batch that overlap the original (h, w) content"""
    (top, left), (h, w) = offsets, size
    return x[..., top // stride:math.ceil((top + h) / stride), left // stride:math.ceil((left + w) / stride)]


def _probabilities(model: ModelCallable, image: np.ndarray) -> np.ndarray:
    h, w = image.shape[2], image.shape[3]
    padded, offsets = pad_to_multiple(image)
    return F.softmax_channels(crop_to_content(model(padded), offsets, (h, w)))


def multiscale_infer(model: ModelCallable, image: np.ndarray, scales: Sequence[float] = EVAL_SCALES,
                     flip: bool = False) -> np.ndarray:
    """
    Average class probabilities over rescaled (and horizontally flipped) passes.

    Args:
        model: Maps an (N, 3, h, w) array with h, w multiples of 32 to (N, K, h, w) logits.
        image: (N, 3, H, W) array at base resolution.
        scales: Resize factors relative to the base size.
        flip: Also run each scale on the mirrored image and mirror the result back.

    Returns:
        (N, K, H, W) mean probabilities.
    """
    if not scales:
        raise DataValidationError("multiscale_infer needs at least one scale")
    image = np.asarray(image)
    if image.ndim != 4:
        raise DimensionError("multiscale_infer", image.shape, detail="expected (N, 3, H, W)")
    height, width = image.shape[2], image.shape[3]

    total = None
    passes = 0
    for scale in scales:
        if scale <= 0:
            raise DataValidationError(f"Scales must be positive, got {scale}")
        h = max(1, int(round(height * scale)))
        w = max(1, int(round(width * scale)))
        scaled = resize_array(image, h, w)
        views = [(scaled, False)] + ([(scaled[:, :, :, ::-1], True)] if flip else [])
        for view, mirrored in views:
            probs = _probabilities(model, np.ascontiguousarray(view))
            if mirrored:
                probs = probs[:, :, :, ::-1]
            probs = resize_array(np.ascontiguousarray(probs), height, width)
            total = probs if total is None else total + probs
            passes += 1
    return total / passes


def evaluate_dataset(model: ModelCallable, images: np.ndarray, labels: np.ndarray, num_classes: int,
                     scales: Sequence[float] = EVAL_SCALES, flip: bool = True, workers: int = 1) -> SegMetrics:
    """
    Multi-scale evaluation over a set of images.

    Each image is inferred independently (on a thread pool when workers > 1)
    and the per-image confusion matrices are summed.
    """
    if len(images) != len(labels):
        raise DimensionError("evaluate_dataset", (len(images),), (len(labels),))

    def confusion_for(index: int) -> np.ndarray:
        probs = multiscale_infer(model, images[index:index + 1], scales, flip)
        return confusion_matrix(F.argmax_mask(probs)[0], labels[index], num_classes)

    indices = range(len(images))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            confusions = list(pool.map(confusion_for, indices))
    else:
        confusions = [confusion_for(i) for i in indices]
    return metrics_from_confusion(merge_confusions(confusions))
