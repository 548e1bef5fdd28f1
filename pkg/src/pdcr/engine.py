"""Per-patch treatment-effect estimation with coarse-to-fine screening.

For one explanation run: the unperturbed prediction fixes the baseline RoI
score m0; each patch outside the RoI is first probed with a few cheap block
replacements, and only patches whose probe effect clears the threshold get
the full trial budget. The result is a per-patch verdict map.

Determinism contract: trial t of patch i always uses the block selected by
the counter stream keyed (seed, i, t), and per-patch effects are reduced in
ascending trial order, so results are bit-identical across runs and across
worker counts.
"""

from __future__ import annotations

import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .bank import PerturbationBank, sample_block
from .errors import BoundsError, ConfigError, FormatError, ModelError, ShapeError
from .imaging import (
    Block,
    Image,
    Mask,
    PatchGrid,
    Rect,
    apply_intervention,
    patches_overlapping,
    roi_dsc,
)
from .sampling import SampleStream
from .segmenters import Segmenter

__all__ = [
    "ReferenceMode",
    "ExplainConfig",
    "PatchVerdict",
    "PdcrMap",
    "ConvergenceTrace",
    "ite",
    "screen_patch",
    "ate_patch",
    "explain",
    "convergence_trace",
    "worst_case_model_calls",
    "MAP_VERSION",
]

MAP_VERSION = 1


class ReferenceMode(enum.Enum):
    """What the RoI score is measured against.

    GROUND_TRUTH compares predictions to a supplied truth mask, so both
    degradation and improvement are observable. SELF_PREDICTION compares to
    the unperturbed prediction (m0 is 1 by construction), for unlabeled use.
    """

    GROUND_TRUTH = "ground_truth"
    SELF_PREDICTION = "self_prediction"


@dataclass(frozen=True)
class ExplainConfig:
    """Full description of one explanation experiment."""

    patch_size: int = 8
    screen_trials: int = 3
    screen_threshold: float = 0.02
    ate_trials: int = 50
    seed: int = 0
    reference_mode: ReferenceMode = ReferenceMode.GROUND_TRUTH

    def __post_init__(self):
        if self.patch_size < 1:
            raise ConfigError(f"patch size must be >= 1, got {self.patch_size}")
        if self.screen_trials < 1:
            raise ConfigError(f"screen trials must be >= 1, got {self.screen_trials}")
        if self.ate_trials < self.screen_trials:
            raise ConfigError(
                f"trial budget {self.ate_trials} must be >= screen trials {self.screen_trials}"
            )
        if self.screen_threshold < 0:
            raise ConfigError(f"screen threshold must be >= 0, got {self.screen_threshold}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


# Verdict tags. ROI membership is stored as a tag, not a float infinity, so
# serialization stays portable; renderers decide how to show it.
_ROI = "roi"
_IRR = "irr"
_ATE = "ate"


@dataclass(frozen=True)
class PatchVerdict:
    """One of: RoI member, screened-out irrelevant, or a full estimate."""

    kind: str
    ate: float | None = None
    trials: int = 0

    @classmethod
    def roi_member(cls) -> "PatchVerdict":
        return cls(kind=_ROI)

    @classmethod
    def irrelevant(cls, trials: int) -> "PatchVerdict":
        return cls(kind=_IRR, ate=0.0, trials=trials)

    @classmethod
    def estimated(cls, ate: float, trials: int) -> "PatchVerdict":
        return cls(kind=_ATE, ate=ate, trials=trials)

    @property
    def is_roi(self) -> bool:
        return self.kind == _ROI

    @property
    def is_irrelevant(self) -> bool:
        return self.kind == _IRR

    @property
    def is_estimate(self) -> bool:
        return self.kind == _ATE


@dataclass(frozen=True)
class PdcrMap:
    """Per-patch causal verdicts for one (image, model, RoI) triple.

    Sign convention: a patch whose destruction degrades the RoI score has
    ate < 0 and counts as a positive contribution (rendered red); ate > 0 is
    a negative contribution (rendered blue).
    """

    grid: PatchGrid
    roi: Rect
    m0: float
    verdicts: tuple[PatchVerdict, ...]
    config: ExplainConfig
    model_id: str
    total_model_calls: int
    degenerate: bool = False

    def __post_init__(self):
        if len(self.verdicts) != self.grid.k:
            raise ShapeError(
                f"verdict count {len(self.verdicts)} != patch count {self.grid.k}"
            )
        if not 0.0 <= self.m0 <= 1.0:
            raise ShapeError(f"m0 must be in [0, 1], got {self.m0}")

    # -- JSON document (schema version 1) ----------------------------------

    def to_json(self) -> str:
        doc = {
            "pdcr_map_version": MAP_VERSION,
            "model_id": self.model_id,
            "m0": self.m0,
            "total_model_calls": self.total_model_calls,
            "degenerate": self.degenerate,
            "config": {
                "patch_size": self.config.patch_size,
                "screen_trials": self.config.screen_trials,
                "screen_threshold": self.config.screen_threshold,
                "ate_trials": self.config.ate_trials,
                "seed": self.config.seed,
                "reference_mode": self.config.reference_mode.value,
            },
            "grid": {
                "patch_size": self.grid.patch_size,
                "cols": self.grid.cols,
                "rows": self.grid.rows,
            },
            "roi": {"x": self.roi.x, "y": self.roi.y, "w": self.roi.w, "h": self.roi.h},
            "verdicts": [
                {"v": v.kind, "ate": v.ate, "trials": v.trials} for v in self.verdicts
            ],
        }
        return json.dumps(doc, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PdcrMap":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"map document is not valid JSON: {e}") from e
        if not isinstance(doc, dict) or doc.get("pdcr_map_version") != MAP_VERSION:
            raise FormatError(
                f"unsupported map document version: {doc.get('pdcr_map_version')!r}"
            )
        try:
            cfg = doc["config"]
            config = ExplainConfig(
                patch_size=cfg["patch_size"],
                screen_trials=cfg["screen_trials"],
                screen_threshold=cfg["screen_threshold"],
                ate_trials=cfg["ate_trials"],
                seed=cfg["seed"],
                reference_mode=ReferenceMode(cfg["reference_mode"]),
            )
            g = doc["grid"]
            grid = PatchGrid(patch_size=g["patch_size"], cols=g["cols"], rows=g["rows"])
            r = doc["roi"]
            roi = Rect(x=r["x"], y=r["y"], w=r["w"], h=r["h"])
            verdicts = tuple(
                PatchVerdict(kind=v["v"], ate=v["ate"], trials=v["trials"])
                for v in doc["verdicts"]
            )
            return cls(
                grid=grid,
                roi=roi,
                m0=doc["m0"],
                verdicts=verdicts,
                config=config,
                model_id=doc["model_id"],
                total_model_calls=doc["total_model_calls"],
                degenerate=doc["degenerate"],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"malformed map document: {e}") from e


@dataclass(frozen=True)
class ConvergenceTrace:
    """Running ATE for one patch; entry t-1 is the mean of the first t
    effects, so entry N-1 equals the final estimate exactly."""

    patch_index: int
    running_ate: tuple[float, ...]


def worst_case_model_calls(grid: PatchGrid, config: ExplainConfig) -> int:
    """Upper bound on trial evaluations if no patch were pruned or RoI-owned:
    every patch runs the full budget."""
    return grid.k * config.ate_trials


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _predict(model: Segmenter, image: Image, patch_index: int, trial: int) -> Mask:
    try:
        return model.predict(image)
    except Exception as e:
        raise ModelError(
            f"model '{model.identity}' failed at patch {patch_index} trial {trial}: {e}"
        ) from e


def ite(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    block: Block,
    m0: float,
    *,
    trial: int = 0,
) -> float:
    """Effect of one block replacement: RoI score after minus before."""
    perturbed = apply_intervention(image, grid, patch_index, block)
    pred = _predict(model, perturbed, patch_index, trial)
    return roi_dsc(pred, reference, roi) - m0


def _patch_ites(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    bank: PerturbationBank,
    seed: int,
    m0: float,
    first: int,
    count: int,
) -> list[float]:
    """Effects for trials [first, first+count) of one patch, in trial order."""
    stream = SampleStream(seed, patch_index)
    stream.skip(first)
    out = []
    for t in range(first, first + count):
        block = sample_block(bank, stream)
        out.append(ite(model, image, reference, roi, grid, patch_index, block, m0, trial=t))
    return out


def screen_patch(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    bank: PerturbationBank,
    config: ExplainConfig,
    m0: float,
) -> list[float] | None:
    """Cheap relevance probe: S trials; None if every |effect| stays strictly
    below the threshold, else the S recorded effects (they count toward the
    full budget)."""
    ites = _patch_ites(
        model, image, reference, roi, grid, patch_index, bank, config.seed, m0,
        first=0, count=config.screen_trials,
    )
    if all(abs(v) < config.screen_threshold for v in ites):
        return None
    return ites


def ate_patch(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    bank: PerturbationBank,
    config: ExplainConfig,
    m0: float,
    carried_ites: list[float],
) -> float:
    """Mean effect over the full budget: carried screening trials plus fresh
    ones, summed in ascending trial order."""
    fresh = _patch_ites(
        model, image, reference, roi, grid, patch_index, bank, config.seed, m0,
        first=len(carried_ites), count=config.ate_trials - len(carried_ites),
    )
    ites = list(carried_ites) + fresh
    return sum(ites) / config.ate_trials


def convergence_trace(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    bank: PerturbationBank,
    seed: int,
    max_trials: int,
) -> ConvergenceTrace:
    """Running means for t = 1..max_trials under the same block stream the
    explanation run would use for this patch."""
    if max_trials < 1:
        raise ConfigError(f"max trials must be >= 1, got {max_trials}")
    if patch_index in patches_overlapping(grid, roi):
        raise BoundsError(f"patch {patch_index} overlaps the RoI; no trace is defined")
    base_pred = _predict(model, image, patch_index, trial=-1)
    m0 = roi_dsc(base_pred, reference, roi)
    stream = SampleStream(seed, patch_index)
    running = []
    acc = 0.0
    for t in range(max_trials):
        block = sample_block(bank, stream)
        acc += ite(model, image, reference, roi, grid, patch_index, block, m0, trial=t)
        running.append(acc / (t + 1))
    return ConvergenceTrace(patch_index=patch_index, running_ate=tuple(running))


# ---------------------------------------------------------------------------
# Whole-map explanation
# ---------------------------------------------------------------------------

def _explain_one_patch(
    model: Segmenter,
    image: Image,
    reference: Mask,
    roi: Rect,
    grid: PatchGrid,
    patch_index: int,
    bank: PerturbationBank,
    config: ExplainConfig,
    m0: float,
) -> tuple[PatchVerdict, int]:
    """Verdict plus model-call count for one non-RoI patch."""
    carried = screen_patch(model, image, reference, roi, grid, patch_index, bank, config, m0)
    if carried is None:
        return PatchVerdict.irrelevant(trials=config.screen_trials), config.screen_trials
    value = ate_patch(
        model, image, reference, roi, grid, patch_index, bank, config, m0, carried
    )
    return PatchVerdict.estimated(ate=value, trials=config.ate_trials), config.ate_trials


def explain(
    model: Segmenter,
    image: Image,
    reference: Mask | None,
    roi: Rect,
    bank: PerturbationBank,
    config: ExplainConfig,
    *,
    workers: int = 1,
) -> PdcrMap:
    """Estimate every patch's causal effect on the RoI score.

    `reference` is required in GROUND_TRUTH mode and ignored otherwise.
    The result is a deterministic function of (inputs, config.seed),
    independent of `workers`.
    """
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    grid = PatchGrid.for_image(image.width, image.height, config.patch_size)
    if not roi.contained_in(image.width, image.height):
        raise BoundsError(
            f"roi {roi.as_tuple()} exceeds image extent {image.width}x{image.height}"
        )
    if bank.block_size != config.patch_size or bank.channels != image.channels:
        raise ShapeError(
            f"bank blocks {bank.block_size}px/{bank.channels}ch do not match patch "
            f"size {config.patch_size} / image channels {image.channels}"
        )

    base_pred = _predict(model, image, patch_index=-1, trial=-1)
    if base_pred.data.shape != (image.height, image.width):
        raise ShapeError(
            f"model '{model.identity}' returned mask {base_pred.data.shape}, "
            f"expected {(image.height, image.width)}"
        )
    if config.reference_mode is ReferenceMode.SELF_PREDICTION:
        reference = base_pred
    elif reference is None:
        raise ConfigError("ground-truth reference mode requires a reference mask")
    if reference.data.shape != base_pred.data.shape:
        raise ShapeError(
            f"reference mask {reference.data.shape} does not match image "
            f"{(image.height, image.width)}"
        )

    m0 = roi_dsc(base_pred, reference, roi)
    sl = (slice(roi.y, roi.y + roi.h), slice(roi.x, roi.x + roi.w))
    # Both sides empty inside the RoI: only negative-direction effects are
    # observable, so the map is flagged rather than rejected.
    degenerate = not base_pred.data[sl].any() and not reference.data[sl].any()

    roi_patches = patches_overlapping(grid, roi)
    todo = [i for i in range(grid.k) if i not in roi_patches]

    def task(i: int) -> tuple[PatchVerdict, int]:
        return _explain_one_patch(model, image, reference, roi, grid, i, bank, config, m0)

    effective = workers
    if model.max_in_flight is not None:
        effective = min(effective, model.max_in_flight)
    if effective > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=effective) as pool:
            results = list(pool.map(task, todo))
    else:
        results = [task(i) for i in todo]

    verdicts: list[PatchVerdict | None] = [None] * grid.k
    for i in roi_patches:
        verdicts[i] = PatchVerdict.roi_member()
    calls = 1  # the unperturbed prediction
    for i, (verdict, used) in zip(todo, results):
        verdicts[i] = verdict
        calls += used

    return PdcrMap(
        grid=grid,
        roi=roi,
        m0=m0,
        verdicts=tuple(verdicts),
        config=config,
        model_id=model.identity,
        total_model_calls=calls,
        degenerate=degenerate,
    )
