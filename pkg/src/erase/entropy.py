"""Raw-image complexity estimation.

Converts images to luminance, partitions them into the vision-token patch
grid, and computes per-patch Shannon entropy (nats) over an intensity
histogram. The median of the per-patch values is the global complexity
score that drives the adaptive pruning policy.

Conventions (configurable where noted):
  * 256 histogram bins by default, one per 8-bit level; bin b holds pixel
    values v with floor(v * bins / 256) == b.
  * Natural log everywhere; a patch entropy lives in [0, ln(bins)].
  * Color is reduced to BT.601 luma before histogramming.
  * Border patches are completed by edge replication, so the token grid is
    deterministic for any resolution; a strict "reject" mode refuses
    non-divisible dimensions instead. No resizing happens here: snapping
    resolutions to model-native grids is the caller's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

PAD_EDGE = "edge-replicate"
PAD_REJECT = "reject"




@dataclass(frozen=True)
class ImageBuffer:
    """8-bit image, shape (height, width, channels), channel-interleaved."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise InvalidInputError(f"image samples must be uint8, got {arr.dtype}")
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise InvalidInputError(f"image must be 2-D or 3-D, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise InvalidInputError(f"image must be at least 1x1, got {w}x{h}")
        if c not in (1, 3):
            raise InvalidInputError(f"channels must be 1 or 3, got {c}")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PatchGeometry:
    """Patch grid over an image; rows/cols use ceiling division."""

    patch_h: int
    patch_w: int
    rows: int
    cols: int
    pad_policy: str = PAD_EDGE

    def __post_init__(self) -> None:
        if self.patch_h < 1 or self.patch_w < 1:
            raise InvalidInputError("patch dimensions must be >= 1")
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid must have at least one patch")
        if self.pad_policy not in (PAD_EDGE, PAD_REJECT):
            raise InvalidInputError(f"unknown pad policy {self.pad_policy!r}")

    @classmethod
    def for_image(cls, width: int, height: int, patch_h: int, patch_w: int,
                  pad_policy: str = PAD_EDGE) -> "PatchGeometry":
        if width < 1 or height < 1:
            raise InvalidInputError("image dimensions must be >= 1")
        return cls(
            patch_h=patch_h,
            patch_w=patch_w,
            rows=-(-height // patch_h),
            cols=-(-width // patch_w),
            pad_policy=pad_policy,
        )

    @property
    def token_count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class EntropyMap:
    """Per-patch entropy values (nats, raster order) plus the global median."""

    values: np.ndarray
    geometry: PatchGeometry
    bins: int
    global_median: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size != self.geometry.token_count:
            raise InvalidInputError(
                f"expected {self.geometry.token_count} values, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def token_count(self) -> int:
        return int(self.values.size)


def to_luminance(img: ImageBuffer) -> ImageBuffer:
    """Reduce an image to one luminance channel.

    3-channel input is mapped by BT.601 weights, round(0.299R + 0.587G +
    0.114B), clamped to [0, 255]. Single-channel input is returned as is.
    """
    if img.channels == 1:
        return img
    if img.channels != 3:
        raise InvalidInputError(f"channels must be 1 or 3, got {img.channels}")
    rgb = img.data.astype(np.float64)
    # explicit left-to-right sum: keeps rounding identical to the plain
    # expression 0.299R + 0.587G + 0.114B on boundary-exact values
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    luma = np.clip(np.floor(luma + 0.5), 0.0, 255.0).astype(np.uint8)
    return ImageBuffer(luma)


def _bin_indices(samples: np.ndarray, bins: int) -> np.ndarray:
    # floor(v * bins / 256) stays exact in int32 for v<=255, bins<=256
    return (samples.astype(np.int32) * bins) >> 8


def patch_entropy(patch_pixels, bins: int = 256) -> float:
    """Shannon entropy (nats) of one patch's intensity histogram.

    Args:
        patch_pixels: 8-bit samples in any shape; flattened before binning.
        bins: histogram bin count in [2, 256].

    Only nonempty bins contribute; P(x) is bin count over pixel count.
    """
    if not 2 <= bins <= 256:
        raise InvalidInputError(f"bins must be in [2, 256], got {bins}")
    flat = np.asarray(patch_pixels).ravel()
    if flat.size == 0:
        raise InvalidInputError("patch must contain at least one pixel")
    if flat.dtype != np.uint8:
        if np.any((flat < 0) | (flat > 255)):
            raise InvalidInputError("pixel values must lie in [0, 255]")
        flat = flat.astype(np.uint8)
    counts = np.bincount(_bin_indices(flat, bins), minlength=bins)
    p = counts[counts > 0] / flat.size
    return float(max(0.0, -np.sum(p * np.log(p))))


def compute_entropy_map(gray: ImageBuffer, geom: PatchGeometry, bins: int = 256) -> EntropyMap:
    """Entropy of every patch in raster order, plus the global median.

    Border patches are completed according to ``geom.pad_policy``:
    edge replication by default, or an error in reject mode when the image
    dimensions are not divisible by the patch size.
    """
    if gray.channels != 1:
        raise InvalidInputError("entropy map expects a single-channel image")
    if not 2 <= bins <= 256:
        raise InvalidInputError(f"bins must be in [2, 256], got {bins}")
    h, w = gray.height, gray.width
    ph, pw = geom.patch_h, geom.patch_w
    full_h, full_w = geom.rows * ph, geom.cols * pw
    if geom.rows != -(-h // ph) or geom.cols != -(-w // pw):
        raise InvalidInputError("geometry does not match image dimensions")
    plane = gray.data[:, :, 0]
    if (full_h, full_w) != (h, w):
        if geom.pad_policy == PAD_REJECT:
            raise InvalidInputError(
                f"image {w}x{h} not divisible by patch {pw}x{ph} (pad policy 'reject')")
        plane = np.pad(plane, ((0, full_h - h), (0, full_w - w)), mode="edge")

    patches = (plane.reshape(geom.rows, ph, geom.cols, pw)
                    .transpose(0, 2, 1, 3)
                    .reshape(geom.token_count, ph * pw))
    binned = _bin_indices(patches, bins)
    offsets = np.arange(geom.token_count, dtype=np.int64)[:, None] * bins
    counts = np.bincount((binned.astype(np.int64) + offsets).ravel(),
                         minlength=geom.token_count * bins)
    counts = counts.reshape(geom.token_count, bins).astype(np.float64)
    p = counts / (ph * pw)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    values = -terms.sum(axis=1)
    # clear -0.0 from constant patches and tiny negative rounding noise
    values[values <= 0] = 0.0
    return EntropyMap(values=values, geometry=geom, bins=bins,
                      global_median=_median(values))


def _median(values: np.ndarray) -> float:
    # even count: mean of the two middle order statistics
    return float(np.median(values))


def global_entropy(emap: EntropyMap) -> float:
    """Median of the per-patch entropies (the image complexity score)."""
    if emap.token_count < 1:
        raise InvalidInputError("entropy map must contain at least one value")
    return _median(emap.values)


def max_entropy(bins: int) -> float:
    """Upper bound ln(bins) for the given histogram resolution."""
    return math.log(bins)
