"""
Image I/O (PNG, binary PGM/PPM) through Pillow, plus weighting-map and mask export.
"""
import json
import os
from typing import Dict, Optional

import numpy as np
from PIL import Image

from src.errors import ArtifactIOError, DimensionError

CONSTANT_MAP_GRAY = 128

# class index -> RGB, cycled for larger class counts
MASK_PALETTE = np.array([
    [0, 0, 0], [220, 50, 40], [40, 190, 70], [50, 80, 230], [240, 200, 30], [160, 60, 200],
    [30, 200, 210], [250, 130, 20], [120, 120, 120], [255, 255, 255],
], dtype=np.uint8)


def read_image(path: str) -> np.ndarray:
    """Image file as a (3, H, W) float32 array in [0, 1]; grayscale is replicated to RGB"""
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise ArtifactIOError("read image", path, str(e)) from e
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))


def _save(img: Image.Image, path: str) -> None:
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        img.save(path)
    except (OSError, ValueError) as e:
        raise ArtifactIOError("write image", path, str(e)) from e


def write_image(path: str, image: np.ndarray) -> None:
    """
    Write a (3, H, W) or (H, W) array; floats are taken to be in [0, 1].
    The format follows the extension (.png, .pgm, .ppm).
    """
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    if image.ndim == 3:
        if image.shape[0] != 3:
            raise DimensionError("write_image", image.shape, detail="expected (3, H, W)")
        _save(Image.fromarray(np.ascontiguousarray(image.transpose(1, 2, 0))), path)
    elif image.ndim == 2:
        _save(Image.fromarray(image), path)
    else:
        raise DimensionError("write_image", image.shape, detail="expected (3, H, W) or (H, W)")


def normalize_map(values: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8; a constant map becomes uniform mid-gray"""
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.full(values.shape, CONSTANT_MAP_GRAY, dtype=np.uint8)
    return np.round((values - low) / (high - low) * 255.0).astype(np.uint8)


def colorize_mask(mask: np.ndarray) -> np.ndarray:
    """(H, W) class map to a (3, H, W) uint8 color image"""
    colors = MASK_PALETTE[np.asarray(mask, dtype=np.int64) % len(MASK_PALETTE)]
    return np.ascontiguousarray(colors.transpose(2, 0, 1))


def write_mask(path: str, mask: np.ndarray) -> None:
    write_image(path, colorize_mask(mask))


def save_weightmap_images(maps: np.ndarray, out_dir: str, prefix: str = "weightmap",
                          extension: str = "png", scale: Optional[int] = None) -> Dict[str, dict]:
    """
    Write each weighting map as an 8-bit grayscale image plus index.json.

    Args:
        maps: (n, h, w) array, one map per codeword.
        out_dir: Output directory (created if missing).
        scale: Optional integer nearest-neighbour enlargement for viewing.

    Returns:
        The index: codeword id -> {"file", "min", "max"}.
    """
    maps = np.asarray(maps)
    if maps.ndim != 3:
        raise DimensionError("save_weightmap_images", maps.shape, detail="expected (n, h, w)")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError("create directory", out_dir, str(e)) from e

    width = max(3, len(str(maps.shape[0] - 1)))
    index: Dict[str, dict] = {}
    for i, values in enumerate(maps):
        pixels = normalize_map(values)
        if scale and scale > 1:
            pixels = np.kron(pixels, np.ones((scale, scale), dtype=np.uint8))
        filename = f"{prefix}_{i:0{width}d}.{extension}"
        write_image(os.path.join(out_dir, filename), pixels)
        index[str(i)] = {"file": filename, "min": float(values.min()), "max": float(values.max())}

    index_path = os.path.join(out_dir, "index.json")
    try:
        with open(index_path, "w", encoding="utf-8") as f:
            json.dump(index, f, indent=2)
    except OSError as e:
        raise ArtifactIOError("write index", index_path, str(e)) from e
    return index
