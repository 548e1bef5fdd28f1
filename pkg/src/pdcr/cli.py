"""Command-line front door.

Subcommands: `bank build`, `explain`, `render`, `trace`, `eval score`,
`eval curve`, `aggregate`. Every run prints the effective seed and config
up front so any output can be reproduced from its log line. All paths are
explicit arguments; the environment variable PDCR_SEED overrides --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import bank as bankmod
from . import figures, segmenters
from .engine import (
    ExplainConfig,
    PdcrMap,
    ReferenceMode,
    convergence_trace,
    explain,
)
from .errors import PdcrError
from .evaluation import (
    DEFAULT_BIN_EDGES,
    aggregate_stats,
    attribution_curve,
    attribution_score,
)
from .gateway import GatewayConfig, SubprocessTransport, TcpTransport, connect
from .imaging import PatchGrid, Rect, load_image, load_mask, save_image
from .render import RenderSpec, render_map

__all__ = ["main"]


def _effective_seed(args) -> int:
    env = os.environ.get("PDCR_SEED")
    if env is not None:
        return int(env)
    return args.seed


def _parse_roi(text: str | None, width: int, height: int) -> Rect:
    """Parse "x,y" or "x,y,w,h"; omitted size defaults to 32x32, omitted
    RoI to a centered 32x32."""
    if text is None:
        return Rect(x=(width - 32) // 2, y=(height - 32) // 2, w=32, h=32)
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 2:
        return Rect(x=parts[0], y=parts[1], w=32, h=32)
    if len(parts) == 4:
        return Rect(x=parts[0], y=parts[1], w=parts[2], h=parts[3])
    raise PdcrError(f"--roi expects x,y or x,y,w,h, got {text!r}")


@contextmanager
def _resolve_model(spec: str, timeout: float, max_in_flight: int):
    """Yield a segmenter for a model spec: "ref:..." runs in-process,
    "cmd:<command line>" spawns a wire-protocol server, "tcp:host:port"
    connects to one."""
    if spec.startswith("ref:"):
        yield segmenters.from_uri(spec)
        return
    if spec.startswith("cmd:"):
        config = GatewayConfig(
            transport=SubprocessTransport(command=spec[4:]),
            request_timeout=timeout,
            max_in_flight=max_in_flight,
        )
    elif spec.startswith("tcp:"):
        host, _, port = spec[4:].rpartition(":")
        if not host or not port.isdigit():
            raise PdcrError(f"--model tcp spec must be tcp:host:port, got {spec!r}")
        config = GatewayConfig(
            transport=TcpTransport(host=host, port=int(port)),
            request_timeout=timeout,
            max_in_flight=max_in_flight,
        )
    else:
        raise PdcrError(f"unknown model spec {spec!r} (expected ref:, cmd: or tcp:)")
    session = connect(config)
    try:
        yield session.segmenter()
    finally:
        session.close()


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="ref:..., cmd:..., or tcp:host:port")
    p.add_argument("--timeout", type=float, default=30.0, help="gateway request timeout (s)")
    p.add_argument("--max-in-flight", type=int, default=8, help="gateway concurrency cap")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--patch", type=int, default=8, help="patch / block edge length")
    p.add_argument("--screen", type=int, default=3, help="screening trials per patch")
    p.add_argument("--tau", type=float, default=0.02, help="screening threshold (DSC)")
    p.add_argument("--trials", type=int, default=50, help="full trial budget per patch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--mode",
        choices=["ground_truth", "self_prediction"],
        default="ground_truth",
        help="reference for the RoI score",
    )


def _load_inputs(args, need_gt: bool):
    image = load_image(args.image)
    reference = None
    if args.gt is not None:
        reference = load_mask(args.gt)
    elif need_gt and args.mode == "ground_truth":
        raise PdcrError("--gt is required in ground_truth mode")
    roi = _parse_roi(args.roi, image.width, image.height)
    return image, reference, roi


def _print_config(cmd: str, seed: int, config: ExplainConfig, roi: Rect, model: str) -> None:
    print(
        f"pdcr {cmd}: seed={seed} patch={config.patch_size} "
        f"screen={config.screen_trials} tau={config.screen_threshold:g} "
        f"trials={config.ate_trials} "
        f"roi={roi.x},{roi.y},{roi.w},{roi.h} mode={config.reference_mode.value} "
        f"model={model}"
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_bank_build(args) -> int:
    seed = _effective_seed(args)
    sources = []
    for entry in args.sources:
        p = Path(entry)
        if p.is_dir():
            sources.extend(sorted(p.glob("*.png")))
        else:
            sources.append(p)
    print(
        f"pdcr bank build: seed={seed} block={args.block} count={args.count} "
        f"sources={len(sources)}"
    )
    images = [load_image(p) for p in sources]
    built = bankmod.build_bank(images, block_size=args.block, count=args.count, seed=seed)
    bankmod.save_bank(built, args.out)
    print(f"wrote {args.out}: {built.count} blocks of {built.block_size}px "
          f"x{built.channels}ch, digest {built.source_digest.hex()[:16]}")
    return 0


def _cmd_explain(args) -> int:
    seed = _effective_seed(args)
    image, reference, roi = _load_inputs(args, need_gt=True)
    config = ExplainConfig(
        patch_size=args.patch,
        screen_trials=args.screen,
        screen_threshold=args.tau,
        ate_trials=args.trials,
        seed=seed,
        reference_mode=ReferenceMode(args.mode),
    )
    _print_config("explain", seed, config, roi, args.model)
    pbank = bankmod.load_bank(args.bank)
    with _resolve_model(args.model, args.timeout, args.max_in_flight) as model:
        pmap = explain(model, image, reference, roi, pbank, config, workers=args.workers)
    Path(args.out).write_text(pmap.to_json(), encoding="utf-8")
    n_roi = sum(v.is_roi for v in pmap.verdicts)
    n_irr = sum(v.is_irrelevant for v in pmap.verdicts)
    n_ate = sum(v.is_estimate for v in pmap.verdicts)
    flag = " DEGENERATE" if pmap.degenerate else ""
    print(
        f"wrote {args.out}: m0={pmap.m0:.6g} calls={pmap.total_model_calls} "
        f"verdicts roi={n_roi} irrelevant={n_irr} estimated={n_ate}{flag}"
    )
    return 0


def _cmd_render(args) -> int:
    pmap = PdcrMap.from_json(Path(args.map).read_text(encoding="utf-8"))
    base = load_image(args.image)
    outline = tuple(int(c) for c in args.outline.split(","))
    if len(outline) != 3:
        raise PdcrError(f"--outline expects r,g,b, got {args.outline!r}")
    spec = RenderSpec(scale=args.scale, overlay_alpha=args.alpha, roi_outline=outline)
    print(
        f"pdcr render: seed={pmap.config.seed} map={args.map} "
        f"scale={'per-map-max' if args.scale is None else args.scale} alpha={args.alpha}"
    )
    save_image(render_map(pmap, base, spec), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_trace(args) -> int:
    seed = _effective_seed(args)
    image, reference, roi = _load_inputs(args, need_gt=True)
    print(
        f"pdcr trace: seed={seed} patch={args.patch} max_trials={args.max_trials} "
        f"roi={roi.x},{roi.y},{roi.w},{roi.h} mode={args.mode} model={args.model}"
    )
    grid = PatchGrid.for_image(image.width, image.height, args.patch)
    pbank = bankmod.load_bank(args.bank)
    with _resolve_model(args.model, args.timeout, args.max_in_flight) as model:
        if args.mode == "self_prediction":
            reference = model.predict(image)
        traces = [
            convergence_trace(
                model, image, reference, roi, grid, idx, pbank, seed, args.max_trials
            )
            for idx in args.patch_index
        ]
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["patch_index", "trial", "running_ate"])
        for tr in traces:
            for t, value in enumerate(tr.running_ate, start=1):
                w.writerow([tr.patch_index, t, repr(value)])
    print(f"wrote {args.out}")
    if args.fig:
        figures.save_trace_figure(traces, args.fig)
        print(f"wrote {args.fig}")
    return 0


def _cmd_eval_score(args) -> int:
    seed = _effective_seed(args)
    image, reference, roi = _load_inputs(args, need_gt=True)
    print(
        f"pdcr eval score: seed={seed} k={args.k} repeats={args.repeats} "
        f"roi={roi.x},{roi.y},{roi.w},{roi.h} mode={args.mode} model={args.model}"
    )
    pmap = PdcrMap.from_json(Path(args.map).read_text(encoding="utf-8"))
    pbank = bankmod.load_bank(args.bank)
    with _resolve_model(args.model, args.timeout, args.max_in_flight) as model:
        if args.mode == "self_prediction":
            reference = model.predict(image)
        result = attribution_score(
            pmap, model, image, reference, roi, pbank,
            k=args.k, repeats=args.repeats, seed=seed,
        )
    doc = {
        "score": result.score,
        "k": result.k,
        "repeats": result.repeats,
        "per_repeat_drops": list(result.per_repeat_drops),
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}: score={result.score:.6g} (k={result.k}, repeats={result.repeats})")
    return 0


def _cmd_eval_curve(args) -> int:
    seed = _effective_seed(args)
    image, reference, roi = _load_inputs(args, need_gt=True)
    print(
        f"pdcr eval curve: seed={seed} steps={args.steps} repeats={args.repeats} "
        f"roi={roi.x},{roi.y},{roi.w},{roi.h} mode={args.mode} model={args.model}"
    )
    pmap = PdcrMap.from_json(Path(args.map).read_text(encoding="utf-8"))
    pbank = bankmod.load_bank(args.bank)
    with _resolve_model(args.model, args.timeout, args.max_in_flight) as model:
        if args.mode == "self_prediction":
            reference = model.predict(image)
        curve = attribution_curve(
            pmap, model, image, reference, roi, pbank,
            max_steps=args.steps, repeats=args.repeats, seed=seed,
        )
    doc = {"steps": list(curve.steps), "mean_drop": list(curve.mean_drop)}
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "mean_drop"])
            for s, d in zip(curve.steps, curve.mean_drop):
                w.writerow([s, repr(d)])
        print(f"wrote {args.csv}")
    if args.fig:
        figures.save_curve_figure({Path(args.map).stem: curve}, args.fig)
        print(f"wrote {args.fig}")
    return 0


def _cmd_aggregate(args) -> int:
    maps = [PdcrMap.from_json(Path(p).read_text(encoding="utf-8")) for p in args.maps]
    edges = (
        tuple(float(e) for e in args.bins.split(",")) if args.bins else DEFAULT_BIN_EDGES
    )
    print(f"pdcr aggregate: maps={len(maps)} bins={','.join(str(e) for e in edges)}")
    by_model: dict[str, list[PdcrMap]] = {}
    for m in maps:
        by_model.setdefault(m.model_id, []).append(m)

    rows = []
    for model_id in sorted(by_model):
        stats = aggregate_stats(by_model[model_id], edges)
        rows.append((model_id, stats))
    with open(args.out, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["model_id", "pos_pct", "neg_pct", "irr_pct", "min_ate", "max_ate"])
        for model_id, stats in rows:
            w.writerow(
                [model_id, repr(stats.pos_pct), repr(stats.neg_pct), repr(stats.irr_pct),
                 repr(stats.min_ate), repr(stats.max_ate)]
            )
    print(f"wrote {args.out}")
    if args.hist:
        doc = {
            model_id: {
                "bin_edges": list(stats.bin_edges),
                "histogram": list(stats.histogram),
            }
            for model_id, stats in rows
        }
        Path(args.hist).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {args.hist}")
    if args.fig:
        pooled = aggregate_stats(maps, edges)
        figures.save_histogram_figure(pooled, args.fig)
        print(f"wrote {args.fig}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdcr",
        description="Patch-wise causal attribution for black-box image segmenters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_bank = sub.add_parser("bank", help="perturbation bank operations")
    bank_sub = p_bank.add_subparsers(dest="bank_command", required=True)
    p_build = bank_sub.add_parser("build", help="crop a block pool from held-out images")
    p_build.add_argument("--sources", nargs="+", required=True,
                         help="source PNGs or directories of PNGs")
    p_build.add_argument("--block", type=int, default=8, help="block edge length")
    p_build.add_argument("--count", type=int, default=bankmod.DEFAULT_BANK_SIZE)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--out", required=True)
    p_build.set_defaults(fn=_cmd_bank_build)

    p_explain = sub.add_parser("explain", help="estimate per-patch causal effects")
    p_explain.add_argument("--image", required=True)
    p_explain.add_argument("--gt", help="ground-truth mask PNG")
    p_explain.add_argument("--roi", help="x,y or x,y,w,h (default: centered 32x32)")
    _add_model_flags(p_explain)
    p_explain.add_argument("--bank", required=True)
    _add_config_flags(p_explain)
    p_explain.add_argument("--workers", type=int, default=1)
    p_explain.add_argument("--out", required=True)
    p_explain.set_defaults(fn=_cmd_explain)

    p_render = sub.add_parser("render", help="render a verdict map over its image")
    p_render.add_argument("--map", required=True)
    p_render.add_argument("--image", required=True)
    p_render.add_argument("--scale", type=float, default=None,
                          help="fixed |effect| at full opacity (default: per-map max)")
    p_render.add_argument("--alpha", type=float, default=0.5)
    p_render.add_argument("--outline", default="0,255,0", help="RoI outline color r,g,b")
    p_render.add_argument("--out", required=True)
    p_render.set_defaults(fn=_cmd_render)

    p_trace = sub.add_parser("trace", help="running-mean effect for chosen patches")
    p_trace.add_argument("--image", required=True)
    p_trace.add_argument("--gt")
    p_trace.add_argument("--roi")
    _add_model_flags(p_trace)
    p_trace.add_argument("--bank", required=True)
    p_trace.add_argument("--patch", type=int, default=8)
    p_trace.add_argument("--mode", choices=["ground_truth", "self_prediction"],
                         default="ground_truth")
    p_trace.add_argument("--patch-index", type=int, nargs="+", required=True)
    p_trace.add_argument("--max-trials", type=int, default=500)
    p_trace.add_argument("--seed", type=int, default=0)
    p_trace.add_argument("--out", required=True, help="CSV of running means")
    p_trace.add_argument("--fig", help="optional PNG figure")
    p_trace.set_defaults(fn=_cmd_trace)

    p_eval = sub.add_parser("eval", help="score explanation maps")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_score = eval_sub.add_parser("score", help="joint top-k deletion drop")
    p_curve = eval_sub.add_parser("curve", help="progressive perturbation curve")
    for p in (p_score, p_curve):
        p.add_argument("--map", required=True)
        p.add_argument("--image", required=True)
        p.add_argument("--gt")
        p.add_argument("--roi")
        _add_model_flags(p)
        p.add_argument("--bank", required=True)
        p.add_argument("--mode", choices=["ground_truth", "self_prediction"],
                       default="ground_truth")
        p.add_argument("--repeats", type=int, default=20)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
    p_score.add_argument("--k", type=int, default=10)
    p_score.set_defaults(fn=_cmd_eval_score)
    p_curve.add_argument("--steps", type=int, default=10)
    p_curve.add_argument("--csv", help="optional CSV alongside the JSON")
    p_curve.add_argument("--fig", help="optional PNG figure")
    p_curve.set_defaults(fn=_cmd_eval_curve)

    p_agg = sub.add_parser("aggregate", help="pool verdict statistics over maps")
    p_agg.add_argument("--maps", nargs="+", required=True)
    p_agg.add_argument("--bins", help="comma-separated contribution bin edges")
    p_agg.add_argument("--out", required=True, help="CSV, one row per model")
    p_agg.add_argument("--hist", help="optional histogram JSON")
    p_agg.add_argument("--fig", help="optional PNG figure")
    p_agg.set_defaults(fn=_cmd_aggregate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (PdcrError, OSError, ValueError) as e:
        print(f"pdcr: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
