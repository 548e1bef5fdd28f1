"""Black-box segmenter contract plus deterministic reference segmenters
whose causal structure is known analytically.

The references exist so the whole attribution pipeline can be validated
against ground truth: a pixel-local model where no remote patch matters, a
global one where every patch can matter, a windowed one with an exact
receptive-field radius, and a gated one with a single planted causal link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable
from urllib.parse import parse_qs, urlparse

import numpy as np

from .imaging import Image, Mask, Rect

__all__ = [
    "Segmenter",
    "intensity",
    "pixel_threshold",
    "global_threshold",
    "local_threshold",
    "planted_cause",
    "from_uri",
]


@dataclass(frozen=True)
class Segmenter:
    """A deterministic Image -> Mask mapping with an opaque interior.

    `max_in_flight` is an advisory cap on concurrent evaluations; None means
    unbounded (all in-process references are pure and reentrant).
    """

    identity: str
    predict: Callable[[Image], Mask] = field(repr=False)
    max_in_flight: int | None = None


def intensity(image: Image) -> np.ndarray:
    """Per-pixel intensity as uint8: the channel itself for grayscale, the
    arithmetic channel mean rounded half up for RGB (exact reproducibility
    is what makes the 8-bit oracles below airtight)."""
    if image.channels == 1:
        return image.data[:, :, 0]
    mean = image.data.mean(axis=2, dtype=np.float64)
    return np.floor(mean + 0.5).astype(np.uint8)


def pixel_threshold(t: int) -> Segmenter:
    """Label a pixel foreground iff its intensity >= t.

    The output at any pixel depends on that pixel alone, so every patch
    disjoint from an RoI has exactly zero effect on it.
    """
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {t}")

    def predict(image: Image) -> Mask:
        return Mask(intensity(image) >= t)

    return Segmenter(identity=f"ref:pixel_threshold?t={t}", predict=predict)


def global_threshold() -> Segmenter:
    """Label a pixel foreground iff its intensity >= the mean intensity of
    the whole image; through the mean, every patch can influence every
    output pixel."""

    def predict(image: Image) -> Mask:
        inten = intensity(image).astype(np.int64)
        # integer cross-multiplication keeps the comparison exact
        return Mask(inten * inten.size >= inten.sum())

    return Segmenter(identity="ref:global_threshold", predict=predict)


def local_threshold(r: int) -> Segmenter:
    """Label a pixel foreground iff its intensity >= the mean over the
    (2r+1)^2 window centered on it, the window clamped to the image bounds
    (each in-bounds pixel counted once, so a radius covering the whole
    image degenerates to the global threshold).

    Output inside an RoI depends only on pixels within Chebyshev distance r
    of the RoI, which gives an exact receptive-field oracle; all arithmetic
    is integer, so the bound holds bit-for-bit.
    """
    if r < 1:
        raise ValueError(f"window radius must be >= 1, got {r}")

    def predict(image: Image) -> Mask:
        inten = intensity(image).astype(np.int64)
        h, w = inten.shape
        sat = np.zeros((h + 1, w + 1), dtype=np.int64)
        np.cumsum(np.cumsum(inten, axis=0), axis=1, out=sat[1:, 1:])
        y0 = np.maximum(np.arange(h) - r, 0)
        y1 = np.minimum(np.arange(h) + r + 1, h)
        x0 = np.maximum(np.arange(w) - r, 0)
        x1 = np.minimum(np.arange(w) + r + 1, w)
        window_sum = (
            sat[y1[:, None], x1[None, :]]
            - sat[y0[:, None], x1[None, :]]
            - sat[y1[:, None], x0[None, :]]
            + sat[y0[:, None], x0[None, :]]
        )
        count = (y1 - y0)[:, None] * (x1 - x0)[None, :]
        return Mask(inten * count >= window_sum)

    return Segmenter(identity=f"ref:local_threshold?r={r}", predict=predict)


def planted_cause(source: Rect, target: Rect, t_on: float) -> Segmenter:
    """Pixel thresholding everywhere, except that the output inside `target`
    is gated by the mean intensity of `source`: below `t_on` the target goes
    all-background. One remote region causally controls the RoI, nothing
    else does.
    """
    if source.intersects(target):
        raise ValueError("source and target regions must be disjoint")

    def predict(image: Image) -> Mask:
        inten = intensity(image)
        out = inten >= 128
        src = inten[source.y : source.y + source.h, source.x : source.x + source.w]
        if src.mean(dtype=np.float64) < t_on:
            out[target.y : target.y + target.h, target.x : target.x + target.w] = False
        return Mask(out)

    return Segmenter(
        identity=(
            f"ref:planted_cause?source={source.x},{source.y},{source.w},{source.h}"
            f"&target={target.x},{target.y},{target.w},{target.h}&t_on={t_on:g}"
        ),
        predict=predict,
    )


# ---------------------------------------------------------------------------
# URI addressing, e.g. "ref:pixel_threshold?t=128"
# ---------------------------------------------------------------------------

def _parse_rect(text: str) -> Rect:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"expected x,y,w,h rectangle, got {text!r}")
    x, y, w, h = (int(p) for p in parts)
    return Rect(x=x, y=y, w=w, h=h)


def from_uri(spec: str) -> Segmenter:
    """Build a reference segmenter from its URI-style spec."""
    parsed = urlparse(spec)
    if parsed.scheme != "ref":
        raise ValueError(f"not a reference segmenter spec: {spec!r}")
    name = parsed.path
    args = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
    if name == "pixel_threshold":
        return pixel_threshold(int(args.get("t", 128)))
    if name == "global_threshold":
        return global_threshold()
    if name == "local_threshold":
        return local_threshold(int(args["r"]))
    if name == "planted_cause":
        return planted_cause(
            source=_parse_rect(args["source"]),
            target=_parse_rect(args["target"]),
            t_on=float(args["t_on"]),
        )
    raise ValueError(f"unknown reference segmenter: {name!r}")
