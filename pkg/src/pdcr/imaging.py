"""Raster primitives: images, binary masks, the patch partition, the Dice
metric, and the pixel-level replacement operator.

Everything here is immutable after construction and safe to share across
threads; all operations are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import BoundsError, ShapeError

__all__ = [
    "Image",
    "Mask",
    "Rect",
    "PatchGrid",
    "Block",
    "dsc",
    "roi_dsc",
    "apply_intervention",
    "patches_overlapping",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """8-bit raster, shape (height, width, channels) with 1 or 3 channels."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.dtype != np.uint8 or d.ndim != 3:
            raise ShapeError(f"image data must be uint8 (H, W, C), got {d.dtype} ndim={d.ndim}")
        if d.shape[2] not in (1, 3):
            raise ShapeError(f"image must have 1 or 3 channels, got {d.shape[2]}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError(f"image extent must be >= 1, got {d.shape[:2]}")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(d)))

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
class Mask:
    """Binary raster, shape (height, width), one label per pixel."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.dtype != np.bool_ or d.ndim != 2:
            raise ShapeError(f"mask data must be bool (H, W), got {d.dtype} ndim={d.ndim}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ShapeError(f"mask extent must be >= 1, got {d.shape}")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(d)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle: top-left (x, y), extent (w, h), all in pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise BoundsError(f"rect extent must be >= 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise BoundsError(f"rect origin must be >= 0, got ({self.x}, {self.y})")

    def contained_in(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height

    def intersects(self, other: "Rect") -> bool:
        return (
            self.x < other.x + other.w
            and other.x < self.x + self.w
            and self.y < other.y + other.h
            and other.y < self.y + self.h
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class PatchGrid:
    """Partition of a raster into square patches anchored at pixel (0, 0).

    Patch index i maps to the rectangle
    ((i mod cols) * P, (i div cols) * P, P, P).
    """

    patch_size: int
    cols: int
    rows: int

    def __post_init__(self):
        if self.patch_size < 1 or self.cols < 1 or self.rows < 1:
            raise ShapeError("grid parameters must be >= 1")

    @classmethod
    def for_image(cls, width: int, height: int, patch_size: int) -> "PatchGrid":
        if patch_size < 1:
            raise ShapeError(f"patch size must be >= 1, got {patch_size}")
        if width % patch_size or height % patch_size:
            raise ShapeError(
                f"patch size {patch_size} must divide image extent {width}x{height} exactly"
            )
        return cls(patch_size=patch_size, cols=width // patch_size, rows=height // patch_size)

    @property
    def k(self) -> int:
        """Total patch count."""
        return self.cols * self.rows

    @property
    def width(self) -> int:
        return self.cols * self.patch_size

    @property
    def height(self) -> int:
        return self.rows * self.patch_size

    def rect(self, index: int) -> Rect:
        if not 0 <= index < self.k:
            raise BoundsError(f"patch index {index} out of range [0, {self.k})")
        p = self.patch_size
        return Rect(x=(index % self.cols) * p, y=(index // self.cols) * p, w=p, h=p)


@dataclass(frozen=True)
class Block:
    """Square replacement tile; dimensions must match the grid patch size."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.dtype != np.uint8 or d.ndim != 3 or d.shape[0] != d.shape[1]:
            raise ShapeError(f"block data must be uint8 (P, P, C), got shape {d.shape}")
        object.__setattr__(self, "data", _freeze(d))

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


# ---------------------------------------------------------------------------
# Metric
# ---------------------------------------------------------------------------

def dsc(a: Mask, b: Mask) -> float:
    """Dice similarity coefficient 2|a n b| / (|a| + |b|).

    Two empty masks score 1.0 (perfect agreement on absence).
    """
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mask dimensions differ: {a.data.shape} vs {b.data.shape}")
    return _dsc_arrays(a.data, b.data)


def _dsc_arrays(a: np.ndarray, b: np.ndarray) -> float:
    denom = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if denom == 0:
        return 1.0
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / denom


def roi_dsc(pred: Mask, reference: Mask, roi: Rect) -> float:
    """Dice coefficient restricted to the pixels inside `roi`."""
    if pred.data.shape != reference.data.shape:
        raise ShapeError(
            f"mask dimensions differ: {pred.data.shape} vs {reference.data.shape}"
        )
    if not roi.contained_in(pred.width, pred.height):
        raise BoundsError(f"roi {roi.as_tuple()} exceeds mask extent {pred.width}x{pred.height}")
    sl = (slice(roi.y, roi.y + roi.h), slice(roi.x, roi.x + roi.w))
    return _dsc_arrays(pred.data[sl], reference.data[sl])


# ---------------------------------------------------------------------------
# Intervention
# ---------------------------------------------------------------------------

def apply_intervention(image: Image, grid: PatchGrid, patch_index: int, block: Block) -> Image:
    """Return a copy of `image` with the indexed patch replaced by `block`.

    The input image is never mutated; all pixels outside the patch are
    bit-identical in the result.
    """
    if grid.width != image.width or grid.height != image.height:
        raise ShapeError(
            f"grid extent {grid.width}x{grid.height} does not match image "
            f"{image.width}x{image.height}"
        )
    if block.size != grid.patch_size or block.channels != image.channels:
        raise ShapeError(
            f"block {block.size}x{block.size}x{block.channels} does not match grid "
            f"patch size {grid.patch_size} / image channels {image.channels}"
        )
    r = grid.rect(patch_index)
    out = image.data.copy()
    out[r.y : r.y + r.h, r.x : r.x + r.w, :] = block.data
    return Image(out)


def patches_overlapping(grid: PatchGrid, roi: Rect) -> frozenset[int]:
    """Indices of all patches whose rectangle intersects `roi` by >= 1 pixel."""
    if not roi.contained_in(grid.width, grid.height):
        raise BoundsError(f"roi {roi.as_tuple()} exceeds grid extent {grid.width}x{grid.height}")
    p = grid.patch_size
    c0, c1 = roi.x // p, (roi.x + roi.w - 1) // p
    r0, r1 = roi.y // p, (roi.y + roi.h - 1) // p
    return frozenset(
        r * grid.cols + c for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)
    )


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def load_image(path: str | Path) -> Image:
    """Load an 8-bit grayscale or RGB PNG (any paletted/alpha input is
    converted to RGB; plain grayscale stays single-channel)."""
    with PILImage.open(path) as im:
        if im.mode == "L":
            arr = np.asarray(im, dtype=np.uint8)[:, :, np.newaxis]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return Image(arr)


def save_image(image: Image, path: str | Path) -> None:
    if image.channels == 1:
        PILImage.fromarray(image.data[:, :, 0], mode="L").save(path)
    else:
        PILImage.fromarray(image.data, mode="RGB").save(path)


def load_mask(path: str | Path) -> Mask:
    """Load a mask PNG as grayscale; intensities >= 128 map to foreground."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return Mask(arr >= 128)


def save_mask(mask: Mask, path: str | Path) -> None:
    PILImage.fromarray(mask.data.astype(np.uint8) * 255, mode="L").save(path)
