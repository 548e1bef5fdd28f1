"""Patch-wise causal attribution for black-box image segmenters.

Given an image, a region of interest, and any deterministic segmentation
model, the engine replaces input patches with tiles drawn from held-out
in-distribution images and measures how the RoI's Dice score responds,
producing a per-patch map of signed average treatment effects.
"""

from .bank import (
    BaselineKind,
    PerturbationBank,
    baseline_block,
    build_bank,
    load_bank,
    sample_block,
    save_bank,
)
from .engine import (
    ConvergenceTrace,
    ExplainConfig,
    PatchVerdict,
    PdcrMap,
    ReferenceMode,
    ate_patch,
    convergence_trace,
    explain,
    ite,
    screen_patch,
    worst_case_model_calls,
)
from .errors import (
    BankBuildError,
    BoundsError,
    ConfigError,
    FormatError,
    GatewayError,
    GatewayTimeout,
    ModelError,
    PdcrError,
    ShapeError,
)
from .evaluation import (
    AggregateStats,
    AttributionCurve,
    AttributionResult,
    aggregate_stats,
    attribution_curve,
    attribution_score,
    contribution_ranking,
)
from .gateway import (
    GatewayConfig,
    GatewaySession,
    SubprocessTransport,
    TcpTransport,
    connect,
    run_conformance,
)
from .imaging import (
    Block,
    Image,
    Mask,
    PatchGrid,
    Rect,
    apply_intervention,
    dsc,
    load_image,
    load_mask,
    patches_overlapping,
    roi_dsc,
    save_image,
    save_mask,
)
from .render import RenderSpec, render_map
from .sampling import SampleStream
from .segmenters import (
    Segmenter,
    global_threshold,
    local_threshold,
    pixel_threshold,
    planted_cause,
)

__version__ = "0.1.0"
