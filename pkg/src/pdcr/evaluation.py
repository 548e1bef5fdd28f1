"""Quantitative evaluation of explanation maps: deletion-style attribution
scores, progressive-perturbation curves, and pooled verdict statistics.

The attribution score is a joint top-k deletion drop: replace the k
highest-ranked patches with fresh bank blocks and measure how far the RoI
score falls, averaged over repeats. Deletion metrics come in several
flavors; this construction was picked because it is seedable,
model-agnostic, and higher-is-better, and it is labeled an interpretation
wherever it is reported.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import PerturbationBank, sample_block
from .engine import PdcrMap
from .errors import ConfigError
from .imaging import Image, Mask, PatchGrid, Rect, patches_overlapping, roi_dsc
from .sampling import SampleStream
from .segmenters import Segmenter

__all__ = [
    "AttributionResult",
    "AttributionCurve",
    "AggregateStats",
    "DEFAULT_BIN_EDGES",
    "contribution_ranking",
    "attribution_score",
    "attribution_curve",
    "aggregate_stats",
]

# Contribution intervals straddle the +-0.02 screening scale and the +-0.2
# range where most real effects land.
DEFAULT_BIN_EDGES = (-1.0, -0.2, -0.02, 0.02, 0.2, 1.0)


@dataclass(frozen=True)
class AttributionResult:
    """Mean RoI-score drop after jointly deleting the top-k patches."""

    score: float
    k: int
    repeats: int
    per_repeat_drops: tuple[float, ...]


@dataclass(frozen=True)
class AttributionCurve:
    """Cumulative deletion drops: entry j-1 is the mean drop after
    perturbing the top-j ranked patches."""

    steps: tuple[int, ...]
    mean_drop: tuple[float, ...]


@dataclass(frozen=True)
class AggregateStats:
    """Pooled verdict statistics over one or more maps (non-RoI patches).

    Percentages follow the verdict sign convention: positive contribution is
    ate < 0, negative is ate > 0, irrelevant is screened-out or exactly zero.
    The histogram counts contribution values c = -ate of the contributing
    patches per interval.
    """

    pos_pct: float
    neg_pct: float
    irr_pct: float
    min_ate: float
    max_ate: float
    bin_edges: tuple[float, ...]
    histogram: tuple[int, ...]


def contribution_ranking(pmap: PdcrMap) -> tuple[int, ...]:
    """Non-RoI patches ordered by descending contribution: most negative
    effect first, ties broken by ascending patch index."""
    entries = []
    for i, v in enumerate(pmap.verdicts):
        if v.is_roi:
            continue
        entries.append((0.0 if v.ate is None else v.ate, i))
    entries.sort()
    return tuple(i for _, i in entries)


def _resolve_ranking(
    ranking: PdcrMap | Sequence[int], grid: PatchGrid, roi: Rect
) -> tuple[int, ...]:
    if isinstance(ranking, PdcrMap):
        return contribution_ranking(ranking)
    roi_patches = patches_overlapping(grid, roi)
    out = tuple(int(i) for i in ranking)
    for i in out:
        if not 0 <= i < grid.k:
            raise ConfigError(f"ranked patch {i} out of range [0, {grid.k})")
        if i in roi_patches:
            raise ConfigError(f"ranked patch {i} overlaps the RoI")
    return out


def _joint_deletion_drops(
    ranked: tuple[int, ...],
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    bank: PerturbationBank,
    k: int,
    repeats: int,
    seed: int,
    m0: float,
) -> list[tuple[float, ...]]:
    """Per repeat: drops after deleting the top-1, top-2, .. top-k patches.

    Repeat r draws its blocks from the stream keyed (seed, r), so the drop
    at step j is identical whether computed standalone or as a curve prefix.
    """
    p = grid.patch_size
    out = []
    for r in range(repeats):
        stream = SampleStream(seed, r)
        work = image.data.copy()
        drops = []
        for j in range(k):
            rect = grid.rect(ranked[j])
            work[rect.y : rect.y + p, rect.x : rect.x + p, :] = sample_block(
                bank, stream
            ).data
            pred = model.predict(Image(work.copy()))
            drops.append(m0 - roi_dsc(pred, reference, roi))
        out.append(tuple(drops))
    return out


def attribution_score(
    ranking: PdcrMap | Sequence[int],
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    bank: PerturbationBank,
    k: int,
    repeats: int,
    seed: int,
) -> AttributionResult:
    """Joint top-k deletion drop, averaged over `repeats` block draws.

    Higher means the ranking localized genuinely load-bearing context.
    """
    grid = PatchGrid.for_image(image.width, image.height, bank.block_size)
    ranked = _resolve_ranking(ranking, grid, roi)
    if not 1 <= k <= len(ranked):
        raise ConfigError(f"k={k} must be in [1, {len(ranked)}]")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    m0 = roi_dsc(model.predict(image), reference, roi)
    per_repeat = _joint_deletion_drops(
        ranked, model, image, reference, roi, grid, bank, k, repeats, seed, m0
    )
    drops = tuple(r[k - 1] for r in per_repeat)
    return AttributionResult(
        score=sum(drops) / repeats, k=k, repeats=repeats, per_repeat_drops=drops
    )


def attribution_curve(
    ranking: PdcrMap | Sequence[int],
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    bank: PerturbationBank,
    max_steps: int,
    repeats: int,
    seed: int,
) -> AttributionCurve:
    """Progressive perturbation: step j deletes the top-j patches jointly."""
    grid = PatchGrid.for_image(image.width, image.height, bank.block_size)
    ranked = _resolve_ranking(ranking, grid, roi)
    if not 1 <= max_steps <= len(ranked):
        raise ConfigError(f"max_steps={max_steps} must be in [1, {len(ranked)}]")
    if repeats < 1:
        raise ConfigError(f"repeats must be >= 1, got {repeats}")
    m0 = roi_dsc(model.predict(image), reference, roi)
    per_repeat = _joint_deletion_drops(
        ranked, model, image, reference, roi, grid, bank, max_steps, repeats, seed, m0
    )
    mean_drop = tuple(
        sum(r[j] for r in per_repeat) / repeats for j in range(max_steps)
    )
    return AttributionCurve(steps=tuple(range(1, max_steps + 1)), mean_drop=mean_drop)


def aggregate_stats(
    maps: Sequence[PdcrMap], bin_edges: Sequence[float] = DEFAULT_BIN_EDGES
) -> AggregateStats:
    """Pool every non-RoI verdict across `maps` into Table-style statistics."""
    if not maps:
        raise ConfigError("need at least one map to aggregate")
    edges = tuple(float(e) for e in bin_edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"bin edges must be strictly increasing, got {edges}")

    pos = neg = irr = 0
    ate_pool: list[float] = []
    contributions: list[float] = []
    for pmap in maps:
        for v in pmap.verdicts:
            if v.is_roi:
                continue
            if v.is_irrelevant:
                irr += 1
                ate_pool.append(0.0)
                continue
            ate_pool.append(v.ate)
            if v.ate < 0:
                pos += 1
                contributions.append(-v.ate)
            elif v.ate > 0:
                neg += 1
                contributions.append(-v.ate)
            else:
                irr += 1
    total = pos + neg + irr
    if total == 0:
        raise ConfigError("maps contain no non-RoI patches")
    hist, _ = np.histogram(np.asarray(contributions, dtype=np.float64), bins=edges)
    return AggregateStats(
        pos_pct=100.0 * pos / total,
        neg_pct=100.0 * neg / total,
        irr_pct=100.0 * irr / total,
        min_ate=min(ate_pool),
        max_ate=max(ate_pool),
        bin_edges=edges,
        histogram=tuple(int(c) for c in hist),
    )
