"""Command-line interface.

Subcommands: ``gen`` (synthetic dataset), ``nms`` (suppression survivors),
``select`` (count-constrained selection from stored scores), ``oracle``
(greedy vs exhaustive agreement), ``refine`` (alternating refinement),
``eval`` (detections against ground truth), ``report`` (render a report).

Diagnostics go to stderr, data to ``--out`` or stdout. Exit codes: 0 on
success, 1 for validation or data errors, 2 for usage errors. Set the
``CRSKIT_LOG`` environment variable (DEBUG, INFO, ...) for progress logging.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import dataio
from .dataio import DatasetError, RunConfig
from .evaluation import build_report, slice_by_count
from .geometry import Box, GeometryError, plus_one_convention
from .refinement import (
    FeatureDimensionError,
    detections_from_scores,
    run_adr,
    score_table,
)
from .selection import (
    CapacityError,
    ScoredRegion,
    SelectionProblem,
    crs_exact,
    crs_greedy,
    nms,
)
from .world import DEFAULT_FEATURE_DIM, generate_world

logger = logging.getLogger("crskit.cli")

_CONFIG_FLAGS = (
    "T",
    "k",
    "nms_threshold",
    "iterations",
    "seed",
    "count_guided",
    "corloc_variant",
    "ap_mode",
    "voc_plus_one",
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="run config JSON file")
    common.add_argument("--T", type=float, default=None, help="overlap threshold")
    common.add_argument("--k", type=int, default=None, help="count cap")
    common.add_argument("--nms-threshold", type=float, default=None, dest="nms_threshold")
    common.add_argument("--iterations", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument(
        "--count-guided",
        action=argparse.BooleanOptionalAction,
        default=None,
        dest="count_guided",
    )
    common.add_argument(
        "--corloc-variant", choices=("iou50", "center"), default=None, dest="corloc_variant"
    )
    common.add_argument("--ap-mode", choices=("11pt", "area"), default=None, dest="ap_mode")
    common.add_argument(
        "--voc-plus-one",
        action=argparse.BooleanOptionalAction,
        default=None,
        dest="voc_plus_one",
    )

    parser = argparse.ArgumentParser(
        prog="crskit", description="Count-guided region selection toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=DEFAULT_FEATURE_DIM)
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("nms", parents=[common], help="run suppression per image and class")
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser(
        "select", parents=[common], help="count-constrained selection from stored scores"
    )
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser(
        "oracle", parents=[common], help="compare greedy selection against the exhaustive solver"
    )
    p.add_argument("--instances", type=int, default=500)
    p.add_argument("--max-regions", type=int, default=12, dest="max_regions")
    p.add_argument("--max-count", type=int, default=4, dest="max_count")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("refine", parents=[common], help="run the refinement loop")
    p.add_argument("--input", required=True, metavar="FILE")
    p.add_argument("--out", metavar="FILE")
    p.add_argument(
        "--detections-out",
        metavar="FILE",
        dest="detections_out",
        help="also write final-iteration detections as JSON Lines",
    )
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="evaluate detections against a dataset")
    p.add_argument("--detections", required=True, metavar="FILE")
    p.add_argument("--dataset", required=True, metavar="FILE")
    p.add_argument("--by-count", action="store_true", dest="by_count")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render a report file as text")
    p.add_argument("--input", required=True, metavar="FILE")
    p.set_defaults(func=cmd_report)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    base = dataio.load_run_config(args.config) if args.config else RunConfig()
    merged = base.to_dict()
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return RunConfig.from_dict(merged)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_gen(args: argparse.Namespace, config: RunConfig) -> int:
    if args.images < 1:
        raise DatasetError(f"--images must be >= 1, got {args.images}")
    if args.classes < 1:
        raise DatasetError(f"--classes must be >= 1, got {args.classes}")
    world = generate_world(
        args.images, args.classes, feature_dim=args.dim, seed=config.seed
    )
    lines = [dataio.dumps_jsonl_line(dataio.record_to_dict(r)) for r in world]
    _emit("\n".join(lines) + "\n", args.out)
    logger.info("generated %d images", len(world))
    return 0


def cmd_nms(args: argparse.Namespace, config: RunConfig) -> int:
    world = dataio.load_dataset(args.input)
    images: dict[str, Any] = {}
    for record in world:
        per_class = {}
        for name in record.positive_classes():
            regions = [
                ScoredRegion(box=p.box, score=p.scores.get(name, 0.0), region_id=p.region_id)
                for p in record.proposals
            ]
            per_class[name] = [r.region_id for r in nms(regions, config.nms_threshold)]
        images[record.image_id] = per_class
    payload = {
        "format_version": dataio.FORMAT_VERSION,
        "nms_threshold": config.nms_threshold,
        "images": images,
    }
    _emit(dataio.dumps_json(payload), args.out)
    return 0


def cmd_select(args: argparse.Namespace, config: RunConfig) -> int:
    world = dataio.load_dataset(args.input)
    images: dict[str, Any] = {}
    for record in world:
        per_class = {}
        for name in record.positive_classes():
            if not record.proposals:
                per_class[name] = {
                    "selected": [],
                    "boxes": [],
                    "total_score": 0.0,
                    "complete": False,
                }
                continue
            regions = tuple(
                ScoredRegion(box=p.box, score=p.scores.get(name, 0.0), region_id=p.region_id)
                for p in record.proposals
            )
            target = min(record.counts[name], config.k) if config.count_guided else 1
            result = crs_greedy(
                SelectionProblem(regions=regions, count=target, threshold=config.T)
            )
            by_id = record.proposal_map()
            per_class[name] = {
                "selected": list(result.selected),
                "boxes": [list(by_id[i].box.as_tuple()) for i in result.selected],
                "total_score": result.total_score,
                "complete": result.complete,
            }
        images[record.image_id] = per_class
    payload = {
        "format_version": dataio.FORMAT_VERSION,
        "T": config.T,
        "k": config.k,
        "count_guided": config.count_guided,
        "images": images,
    }
    _emit(dataio.dumps_json(payload), args.out)
    return 0


def _random_problem(
    rng: np.random.Generator, max_regions: int, max_count: int, threshold: float
) -> SelectionProblem:
    n = int(rng.integers(2, max_regions + 1))
    regions = []
    for region_id in range(n):
        w = rng.uniform(5.0, 50.0)
        h = rng.uniform(5.0, 50.0)
        x = rng.uniform(0.0, 100.0 - w)
        y = rng.uniform(0.0, 100.0 - h)
        regions.append(
            ScoredRegion(
                box=Box(x, y, x + w, y + h),
                score=float(rng.uniform(0.0, 1.0)),
                region_id=region_id,
            )
        )
    count = int(rng.integers(1, max_count + 1))
    return SelectionProblem(regions=tuple(regions), count=count, threshold=threshold)


def cmd_oracle(args: argparse.Namespace, config: RunConfig) -> int:
    if args.instances < 1:
        raise DatasetError(f"--instances must be >= 1, got {args.instances}")
    if args.max_regions < 2:
        raise DatasetError(f"--max-regions must be >= 2, got {args.max_regions}")
    if args.max_count < 1:
        raise DatasetError(f"--max-count must be >= 1, got {args.max_count}")
    rng = np.random.default_rng(config.seed)
    matches = 0
    exceeds = 0
    gaps = []
    for _ in range(args.instances):
        problem = _random_problem(rng, args.max_regions, args.max_count, config.T)
        greedy = crs_greedy(problem)
        exact = crs_exact(problem, constraint_mode="directional")
        gap = exact.total_score - greedy.total_score
        gaps.append(gap)
        if abs(gap) <= 1e-9:
            matches += 1
        elif gap < 0:
            exceeds += 1
    payload = {
        "format_version": dataio.FORMAT_VERSION,
        "T": config.T,
        "instances": args.instances,
        "max_regions": args.max_regions,
        "max_count": args.max_count,
        "match_rate": matches / args.instances,
        "mean_score_gap": float(np.mean(gaps)),
        "max_score_gap": float(np.max(gaps)),
        "greedy_exceeds_exact": exceeds,
    }
    _emit(dataio.dumps_json(payload), args.out)
    return 0


def _world_feature_dim(world) -> int:
    for record in world:
        for proposal in record.proposals:
            if proposal.feature is not None:
                return len(proposal.feature)
    raise DatasetError("refinement needs proposal features, none found in the dataset")


def cmd_refine(args: argparse.Namespace, config: RunConfig) -> int:
    world = dataio.load_dataset(args.input)
    if not world:
        raise DatasetError("dataset is empty")
    refinement = config.refinement_config(feature_dim=_world_feature_dim(world))
    report = run_adr(
        world, refinement, corloc_variant=config.corloc_variant, ap_mode=config.ap_mode
    )
    _emit(dataio.dumps_json(dataio.refinement_report_to_dict(report)), args.out)
    if args.detections_out:
        scores = score_table(world, report.scorer)
        detections = detections_from_scores(world, scores, refinement.nms_threshold)
        dataio.save_detections(detections, args.detections_out)
    return 0


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    detections = dataio.load_detections(args.detections)
    world = dataio.load_dataset(args.dataset)
    gt = {record.image_id: dict(record.gt_boxes) for record in world}
    report = build_report(
        detections, gt, corloc_variant=config.corloc_variant, ap_mode=config.ap_mode
    )
    if args.by_count:
        report.buckets = slice_by_count(
            detections, gt, corloc_variant=config.corloc_variant, ap_mode=config.ap_mode
        )
    _emit(dataio.dumps_json(dataio.eval_report_to_dict(report)), args.out)
    return 0


def _format_metric(value: Any) -> str:
    if value is None:
        return "-"
    return f"{value:.4f}"


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    import json

    with open(args.input, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"report: malformed JSON: {exc}") from exc
    lines = []
    if isinstance(data, dict) and "iterations" in data:
        lines.append("iteration  mean_ap  mean_corloc  purity")
        for entry in data["iterations"]:
            lines.append(
                f"{entry.get('iteration', '?'):>9}"
                f"  {_format_metric(entry.get('mean_ap')):>7}"
                f"  {_format_metric(entry.get('mean_corloc')):>11}"
                f"  {_format_metric(entry.get('purity')):>6}"
            )
    elif isinstance(data, dict) and "per_class_ap" in data:
        lines.append("class  ap  corloc")
        for name in sorted(data["per_class_ap"]):
            ap = data["per_class_ap"][name]
            rate = data.get("per_class_corloc", {}).get(name)
            lines.append(f"{name}  {_format_metric(ap)}  {_format_metric(rate)}")
        lines.append(
            f"mean  {_format_metric(data.get('mean_ap'))}"
            f"  {_format_metric(data.get('mean_corloc'))}"
        )
        for bucket, sub in sorted(data.get("buckets", {}).items()):
            lines.append(
                f"count {bucket}: mean_ap={_format_metric(sub.get('mean_ap'))}"
                f" mean_corloc={_format_metric(sub.get('mean_corloc'))}"
            )
    else:
        raise DatasetError("report: unrecognized report structure")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cli_dispatch(argv: list[str]) -> int:
    """Parse and run one CLI invocation, returning the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    pkg_logger = logging.getLogger("crskit")
    previous_level = pkg_logger.level
    handler = None
    level = os.environ.get("CRSKIT_LOG")
    if level:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        pkg_logger.addHandler(handler)
        pkg_logger.setLevel(getattr(logging, level.upper(), logging.WARNING))
    try:
        config = _resolve_config(args)
        with plus_one_convention(config.voc_plus_one):
            return args.func(args, config)
    except (
        DatasetError,
        GeometryError,
        CapacityError,
        FeatureDimensionError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if handler is not None:
            pkg_logger.removeHandler(handler)
            pkg_logger.setLevel(previous_level)


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
