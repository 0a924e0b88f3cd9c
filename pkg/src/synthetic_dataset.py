"""
Synthetic Shapes Dataset
Deterministic toy segmentation set: colored rectangles, discs and triangles
on a textured background. Class 0 is background.
"""
from typing import List, Tuple

import numpy as np

from src.errors import DataValidationError

CLASS_NAMES = ("background", "rectangle", "disc", "triangle")
NUM_CLASSES = len(CLASS_NAMES)

# per-class mean RGB; individual shapes jitter around it
CLASS_COLORS = np.array([
    [0.45, 0.45, 0.45],
    [0.85, 0.20, 0.15],
    [0.15, 0.75, 0.25],
    [0.20, 0.30, 0.90],
], dtype=np.float32)


class SyntheticShapes:
    """
    Args:
        num_images: Dataset length.
        size: (H, W) of every image.
        seed: Base seed; image i is generated from (seed, i) so items are reproducible individually.
        noise_std: Standard deviation of the per-pixel Gaussian noise.
        color_jitter: Standard deviation of the per-shape color offset.
    """

    def __init__(self, num_images: int = 50, size: Tuple[int, int] = (64, 64), seed: int = 0,
                 noise_std: float = 0.05, color_jitter: float = 0.06, max_shapes: int = 3):
        if num_images < 1:
            raise DataValidationError(f"num_images must be >= 1, got {num_images}")
        if size[0] < 16 or size[1] < 16:
            raise DataValidationError(f"Images must be at least 16x16, got {size}")
        self.num_images = num_images
        self.size = (int(size[0]), int(size[1]))
        self.seed = seed
        self.noise_std = noise_std
        self.color_jitter = color_jitter
        self.max_shapes = max_shapes

    def __len__(self) -> int:
        return self.num_images

    def __getitem__(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        if not 0 <= index < self.num_images:
            raise IndexError(index)
        return self._generate(np.random.default_rng([self.seed, index]))

    def batch(self, indices: List[int]) -> Tuple[np.ndarray, np.ndarray]:
        items = [self[i] for i in indices]
        return np.stack([img for img, _ in items]), np.stack([lbl for _, lbl in items])

    def as_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.batch(list(range(self.num_images)))

    def _background(self, rng: np.random.Generator) -> np.ndarray:
        h, w = self.size
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
        freq = rng.uniform(0.15, 0.45, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        texture = 0.08 * np.sin(freq[0] * xx + freq[1] * yy + phase)
        image = CLASS_COLORS[0][:, None, None] + texture[None]
        return image.astype(np.float32)

    def _shape_mask(self, kind: int, rng: np.random.Generator) -> np.ndarray:
        h, w = self.size
        yy, xx = np.mgrid[0:h, 0:w]
        extent = min(h, w)
        if kind == 1:
            rh, rw = rng.integers(extent // 5, extent // 2, size=2)
            top = rng.integers(0, h - rh)
            left = rng.integers(0, w - rw)
            return (yy >= top) & (yy < top + rh) & (xx >= left) & (xx < left + rw)
        if kind == 2:
            radius = rng.uniform(extent / 8, extent / 4)
            cy = rng.uniform(radius, h - radius)
            cx = rng.uniform(radius, w - radius)
            return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        # triangle from three random vertices, filled by barycentric sign tests
        side = rng.uniform(extent / 3, extent / 2)
        cy, cx = rng.uniform(side / 2, h - side / 2), rng.uniform(side / 2, w - side / 2)
        angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        vy = cy + side / 2 * np.sin(angles)
        vx = cx + side / 2 * np.cos(angles)
        signs = []
        for i in range(3):
            j = (i + 1) % 3
            signs.append((xx - vx[j]) * (vy[i] - vy[j]) - (vx[i] - vx[j]) * (yy - vy[j]))
        signs = np.stack(signs)
        return np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)

    def _generate(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        image = self._background(rng)
        label = np.zeros(self.size, dtype=np.int64)
        for _ in range(rng.integers(1, self.max_shapes + 1)):
            kind = int(rng.integers(1, NUM_CLASSES))
            mask = self._shape_mask(kind, rng)
            color = CLASS_COLORS[kind] + rng.normal(0, self.color_jitter, size=3).astype(np.float32)
            image[:, mask] = color[:, None]
            label[mask] = kind
        image += rng.normal(0, self.noise_std, size=image.shape).astype(np.float32)
        return np.clip(image, 0.0, 1.0).astype(np.float32), label
