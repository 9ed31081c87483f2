"""Dataset, detection, and report serialization.

Datasets are JSON Lines: one image record per line, schema version 1.

    {"format_version": 1,
     "image_id": "img_0000",
     "classes": {"class_0": {"count": 2, "gt_boxes": [[0,0,4,10], [6,0,10,10]]}},
     "proposals": [{"region_id": 0, "box": [0,0,10,10],
                    "scores": {"class_0": 0.9},
                    "feature": [0.1, ...],          # optional
                    "provenance": "merged"}]}       # optional

Detections are JSON Lines of ``{"image_id", "class_id", "box", "confidence"}``.
Serialization is canonical (sorted keys, fixed separators), so writing the
same data twice produces identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .annotation import COUNT_UI_CAP
from .evaluation import AP_MODES, CORLOC_VARIANTS, Detection, EvalReport
from .geometry import Box, GeometryError
from .refinement import CentroidScorer, RefinementConfig, RefinementReport
from .world import ImageRecord, Proposal

__all__ = [
    "FORMAT_VERSION",
    "DatasetError",
    "RunConfig",
    "load_dataset",
    "save_dataset",
    "load_detections",
    "save_detections",
    "load_run_config",
    "record_to_dict",
    "record_from_dict",
    "eval_report_to_dict",
    "refinement_report_to_dict",
    "dumps_json",
    "dumps_jsonl_line",
]

FORMAT_VERSION = 1


class DatasetError(ValueError):
    """A schema or format violation, located by line and field path."""


def _fail(line: int | None, path: str, message: str) -> None:
    prefix = f"line {line}: " if line is not None else ""
    raise DatasetError(f"{prefix}{path}: {message}")


def _require_keys(
    data: Mapping[str, Any], allowed: set[str], required: set[str], line: int | None, path: str
) -> None:
    unknown = set(data) - allowed
    if unknown:
        _fail(line, path, f"unknown keys: {sorted(unknown)}")
    missing = required - set(data)
    if missing:
        _fail(line, path, f"missing keys: {sorted(missing)}")


def _number(value: Any, line: int | None, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(line, path, f"expected a number, got {type(value).__name__}")
    if not np.isfinite(value):
        _fail(line, path, f"expected a finite number, got {value}")
    return float(value)


def _box(value: Any, line: int | None, path: str) -> Box:
    if not isinstance(value, list) or len(value) != 4:
        _fail(line, path, "expected [x1, y1, x2, y2]")
    coords = [_number(v, line, f"{path}[{i}]") for i, v in enumerate(value)]
    try:
        return Box(*coords)
    except GeometryError as exc:
        _fail(line, path, str(exc))
    raise AssertionError  # unreachable


def record_from_dict(data: Any, line: int | None = None) -> ImageRecord:
    """Validate one parsed dataset line and build an image record."""
    if not isinstance(data, dict):
        _fail(line, "record", "expected a JSON object")
    _require_keys(
        data,
        allowed={"format_version", "image_id", "classes", "proposals"},
        required={"format_version", "image_id", "classes", "proposals"},
        line=line,
        path="record",
    )
    if data["format_version"] != FORMAT_VERSION:
        _fail(line, "format_version", f"unsupported version {data['format_version']!r}")
    if not isinstance(data["image_id"], str) or not data["image_id"]:
        _fail(line, "image_id", "expected a non-empty string")
    record = ImageRecord(image_id=data["image_id"])
    if not isinstance(data["classes"], dict):
        _fail(line, "classes", "expected an object")
    for name, entry in data["classes"].items():
        path = f"classes.{name}"
        if not isinstance(entry, dict):
            _fail(line, path, "expected an object")
        _require_keys(entry, {"count", "gt_boxes"}, {"count", "gt_boxes"}, line, path)
        count = entry["count"]
        if isinstance(count, bool) or not isinstance(count, int):
            _fail(line, f"{path}.count", "expected an integer")
        if not 0 <= count <= COUNT_UI_CAP:
            _fail(line, f"{path}.count", f"must be in [0, {COUNT_UI_CAP}], got {count}")
        if not isinstance(entry["gt_boxes"], list):
            _fail(line, f"{path}.gt_boxes", "expected a list")
        boxes = [
            _box(b, line, f"{path}.gt_boxes[{i}]")
            for i, b in enumerate(entry["gt_boxes"])
        ]
        record.gt_boxes[name] = boxes
        record.counts[name] = count
    if not isinstance(data["proposals"], list):
        _fail(line, "proposals", "expected a list")
    seen_ids = set()
    dims = set()
    for i, entry in enumerate(data["proposals"]):
        path = f"proposals[{i}]"
        if not isinstance(entry, dict):
            _fail(line, path, "expected an object")
        _require_keys(
            entry,
            allowed={"region_id", "box", "scores", "feature", "provenance"},
            required={"region_id", "box", "scores"},
            line=line,
            path=path,
        )
        region_id = entry["region_id"]
        if isinstance(region_id, bool) or not isinstance(region_id, int):
            _fail(line, f"{path}.region_id", "expected an integer")
        if region_id in seen_ids:
            _fail(line, f"{path}.region_id", f"duplicate region_id {region_id}")
        seen_ids.add(region_id)
        box = _box(entry["box"], line, f"{path}.box")
        if not isinstance(entry["scores"], dict):
            _fail(line, f"{path}.scores", "expected an object")
        scores = {}
        for name, value in entry["scores"].items():
            score = _number(value, line, f"{path}.scores.{name}")
            if not 0.0 <= score <= 1.0:
                _fail(line, f"{path}.scores.{name}", f"must be in [0, 1], got {score}")
            scores[name] = score
        feature = None
        if entry.get("feature") is not None:
            raw = entry["feature"]
            if not isinstance(raw, list) or not raw:
                _fail(line, f"{path}.feature", "expected a non-empty list of numbers")
            feature = np.array(
                [_number(v, line, f"{path}.feature[{j}]") for j, v in enumerate(raw)]
            )
            dims.add(len(raw))
        provenance = entry.get("provenance")
        if provenance is not None and not isinstance(provenance, str):
            _fail(line, f"{path}.provenance", "expected a string")
        record.proposals.append(
            Proposal(
                region_id=region_id,
                box=box,
                scores=scores,
                feature=feature,
                provenance=provenance,
            )
        )
    if len(dims) > 1:
        _fail(line, "proposals", f"mixed feature dimensions: {sorted(dims)}")
    return record


def record_to_dict(record: ImageRecord) -> dict[str, Any]:
    classes = {
        name: {
            "count": record.counts.get(name, len(boxes)),
            "gt_boxes": [list(b.as_tuple()) for b in boxes],
        }
        for name, boxes in record.gt_boxes.items()
    }
    for name, count in record.counts.items():
        classes.setdefault(name, {"count": count, "gt_boxes": []})
    proposals = []
    for p in record.proposals:
        entry: dict[str, Any] = {
            "region_id": p.region_id,
            "box": list(p.box.as_tuple()),
            "scores": {k: float(v) for k, v in p.scores.items()},
        }
        if p.feature is not None:
            entry["feature"] = [float(v) for v in p.feature]
        if p.provenance is not None:
            entry["provenance"] = p.provenance
        proposals.append(entry)
    return {
        "format_version": FORMAT_VERSION,
        "image_id": record.image_id,
        "classes": classes,
        "proposals": proposals,
    }


def dumps_json(payload: Any) -> str:
    """Canonical indented JSON for report files."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def dumps_jsonl_line(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def load_dataset(path: str | Path) -> list[ImageRecord]:
    """Load a JSON Lines dataset, reporting the first violation by line."""
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: malformed JSON: {exc}") from exc
            record = record_from_dict(data, line=line_no)
            if record.image_id in seen:
                _fail(line_no, "image_id", f"duplicate image_id {record.image_id!r}")
            seen.add(record.image_id)
            records.append(record)
    return records


def save_dataset(records: Iterable[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(dumps_jsonl_line(record_to_dict(record)) + "\n")


def load_detections(path: str | Path) -> list[Detection]:
    detections = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: malformed JSON: {exc}") from exc
            if not isinstance(data, dict):
                _fail(line_no, "detection", "expected a JSON object")
            _require_keys(
                data,
                allowed={"image_id", "class_id", "box", "confidence"},
                required={"image_id", "class_id", "box", "confidence"},
                line=line_no,
                path="detection",
            )
            if not isinstance(data["image_id"], str):
                _fail(line_no, "image_id", "expected a string")
            if not isinstance(data["class_id"], str):
                _fail(line_no, "class_id", "expected a string")
            confidence = _number(data["confidence"], line_no, "confidence")
            if not 0.0 <= confidence <= 1.0:
                _fail(line_no, "confidence", f"must be in [0, 1], got {confidence}")
            detections.append(
                Detection(
                    image_id=data["image_id"],
                    class_id=data["class_id"],
                    box=_box(data["box"], line_no, "box"),
                    confidence=confidence,
                )
            )
    return detections


def save_detections(detections: Iterable[Detection], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for det in detections:
            handle.write(
                dumps_jsonl_line(
                    {
                        "image_id": det.image_id,
                        "class_id": det.class_id,
                        "box": list(det.box.as_tuple()),
                        "confidence": float(det.confidence),
                    }
                )
                + "\n"
            )


@dataclass(frozen=True)
class RunConfig:
    """File and CLI-level run parameters; unknown keys are rejected."""

    T: float = 0.1
    k: int = 3
    nms_threshold: float = 0.3
    iterations: int = 3
    seed: int = 0
    count_guided: bool = True
    corloc_variant: str = "iou50"
    ap_mode: str = "11pt"
    voc_plus_one: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.T <= 1.0:
            raise ValueError(f"T must be in (0, 1], got {self.T}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.nms_threshold <= 1.0:
            raise ValueError(f"nms_threshold must be in (0, 1], got {self.nms_threshold}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.corloc_variant not in CORLOC_VARIANTS:
            raise ValueError(f"unknown corloc variant: {self.corloc_variant!r}")
        if self.ap_mode not in AP_MODES:
            raise ValueError(f"unknown AP mode: {self.ap_mode!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(data, Mapping):
            raise DatasetError("config: expected a JSON object")
        fields = {
            "T", "k", "nms_threshold", "iterations", "seed",
            "count_guided", "corloc_variant", "ap_mode", "voc_plus_one",
        }
        unknown = set(data) - fields
        if unknown:
            raise DatasetError(f"config: unknown keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"config: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def refinement_config(self, feature_dim: int) -> RefinementConfig:
        return RefinementConfig(
            iterations=self.iterations,
            threshold=self.T,
            count_cap=self.k,
            nms_threshold=self.nms_threshold,
            feature_dim=feature_dim,
            seed=self.seed,
            count_guided=self.count_guided,
        )


def load_run_config(path: str | Path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"config: malformed JSON: {exc}") from exc
    return RunConfig.from_dict(data)


def eval_report_to_dict(report: EvalReport) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "per_class_ap": {k: float(v) for k, v in report.per_class_ap.items()},
        "per_class_corloc": {k: float(v) for k, v in report.per_class_corloc.items()},
        "mean_ap": None if report.mean_ap is None else float(report.mean_ap),
        "mean_corloc": None if report.mean_corloc is None else float(report.mean_corloc),
        "purity": None if report.purity is None else float(report.purity),
        "absent_classes": list(report.absent_classes),
    }
    if report.buckets is not None:
        payload["buckets"] = {
            name: eval_report_to_dict(sub) for name, sub in report.buckets.items()
        }
    return payload


def refinement_report_to_dict(report: RefinementReport) -> dict[str, Any]:
    config = report.config
    payload: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "config": {
            "iterations": config.iterations,
            "T": config.threshold,
            "k": config.count_cap,
            "nms_threshold": config.nms_threshold,
            "feature_dim": config.feature_dim,
            "seed": config.seed,
            "count_guided": config.count_guided,
        },
        "iterations": [
            {"iteration": entry.iteration, **eval_report_to_dict(entry.report)}
            for entry in report.iterations
        ],
    }
    if report.scorer is not None:
        payload["prototypes"] = {
            name: [float(v) for v in vec]
            for name, vec in report.scorer.prototypes.items()
        }
    return payload
