"""Lossless image IO (PNG/PPM) and raster exports.

Decoding is restricted to lossless formats on purpose: lossy artifacts
would perturb patch histograms and break golden entropy values. Heatmaps
are written as 16-bit grayscale PNGs on a linear 0..ln(bins) scale; patch
masks as binary PNGs over the token grid.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .entropy import EntropyMap, ImageBuffer, PatchGeometry, max_entropy
from .errors import DataError

_ALLOWED_FORMATS = ("PNG", "PPM")


def decode_image(path: str | Path) -> ImageBuffer:
    """Decode a PNG or PPM file into an 8-bit image buffer."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in _ALLOWED_FORMATS:
                raise DataError(
                    f"{path}: unsupported format {im.format!r} (PNG/PPM only)")
            if im.mode in ("L", "RGB"):
                converted = im.copy()
            elif im.mode in ("1", "I;16", "I", "LA"):
                converted = im.convert("L")
            elif im.mode in ("P", "RGBA"):
                converted = im.convert("RGB")
            else:
                raise DataError(f"{path}: unsupported mode {im.mode!r}")
            arr = np.asarray(converted, dtype=np.uint8)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read image: {path}") from exc
    except UnidentifiedImageError as exc:
        raise DataError(f"cannot decode image: {path}") from exc
    return ImageBuffer(arr)


def write_gray_png(path: str | Path, plane: np.ndarray) -> None:
    Image.fromarray(np.asarray(plane, dtype=np.uint8), mode="L").save(path, format="PNG")


def write_gray16_png(path: str | Path, plane: np.ndarray) -> None:
    arr = np.asarray(plane, dtype=np.uint16)
    Image.fromarray(arr, mode="I;16").save(path, format="PNG")


def write_entropy_heatmap(path: str | Path, emap: EntropyMap) -> None:
    """Per-patch entropy as 16-bit grayscale: 0..ln(bins) -> 0..65535."""
    scale = max_entropy(emap.bins)
    grid = emap.values.reshape(emap.geometry.rows, emap.geometry.cols)
    plane = np.floor(np.clip(grid / scale, 0.0, 1.0) * 65535.0 + 0.5).astype(np.uint16)
    write_gray16_png(path, plane)


def write_patch_mask(path: str | Path, kept_indices, geometry: PatchGeometry) -> None:
    """Binary mask over the patch grid; kept patches are white."""
    mask = np.zeros(geometry.token_count, dtype=np.uint8)
    mask[list(kept_indices)] = 255
    write_gray_png(path, mask.reshape(geometry.rows, geometry.cols))


def write_threshold_masks(low_path: str | Path, high_path: str | Path,
                          emap: EntropyMap, split: float) -> None:
    """Low/high-entropy patch masks at a split threshold."""
    low = np.flatnonzero(emap.values <= split)
    high = np.flatnonzero(emap.values > split)
    write_patch_mask(low_path, low, emap.geometry)
    write_patch_mask(high_path, high, emap.geometry)
