"""Saliency-map rendering: red for positive contributions (destroying the
patch hurts the RoI), blue for negative ones, untinted for irrelevant and
RoI-member patches, with the RoI outlined.

RoI members are left untinted on purpose: their self-effect is off the
scale of every finite estimate and would saturate any color ramp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import PdcrMap
from .errors import ShapeError
from .imaging import Image

__all__ = ["RenderSpec", "render_map"]

_RED = np.array([255.0, 0.0, 0.0])
_BLUE = np.array([0.0, 0.0, 255.0])


@dataclass(frozen=True)
class RenderSpec:
    """scale=None normalizes each map to its own largest |effect| (the
    strongest patch renders at full opacity); a fixed positive scale makes
    colors comparable across maps."""

    scale: float | None = None
    overlay_alpha: float = 0.5
    roi_outline: tuple[int, int, int] = (0, 255, 0)

    def __post_init__(self):
        if self.scale is not None and self.scale <= 0:
            raise ValueError(f"fixed scale must be > 0, got {self.scale}")
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise ValueError(f"overlay alpha must be in [0, 1], got {self.overlay_alpha}")


def render_map(pmap: PdcrMap, base: Image, spec: RenderSpec = RenderSpec()) -> Image:
    """Blend the verdict tints over `base` and outline the RoI. Pure
    function of (map, base, spec); always returns RGB."""
    grid = pmap.grid
    if base.width != grid.width or base.height != grid.height:
        raise ShapeError(
            f"base image {base.width}x{base.height} does not match map grid "
            f"{grid.width}x{grid.height}"
        )
    if base.channels == 1:
        canvas = np.repeat(base.data.astype(np.float64), 3, axis=2)
    else:
        canvas = base.data.astype(np.float64)

    scale = spec.scale
    if scale is None:
        magnitudes = [abs(v.ate) for v in pmap.verdicts if v.is_estimate]
        scale = max(magnitudes, default=0.0)

    p = grid.patch_size
    if scale > 0:
        for i, v in enumerate(pmap.verdicts):
            if not v.is_estimate or v.ate == 0.0:
                continue
            a = min(abs(v.ate) / scale, 1.0) * spec.overlay_alpha
            color = _RED if v.ate < 0 else _BLUE
            r = grid.rect(i)
            region = canvas[r.y : r.y + p, r.x : r.x + p, :]
            region *= 1.0 - a
            region += color * a

    roi = pmap.roi
    outline = np.array(spec.roi_outline, dtype=np.float64)
    x0, x1 = roi.x, roi.x + roi.w
    y0, y1 = roi.y, roi.y + roi.h
    canvas[y0, x0:x1, :] = outline
    canvas[y1 - 1, x0:x1, :] = outline
    canvas[y0:y1, x0, :] = outline
    canvas[y0:y1, x1 - 1, :] = outline

    return Image(np.floor(np.clip(canvas, 0.0, 255.0) + 0.5).astype(np.uint8))
