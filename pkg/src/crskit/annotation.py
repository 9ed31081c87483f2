"""Per-class object-count supervision."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .geometry import Box

__all__ = [
    "COUNT_UI_CAP",
    "DEFAULT_COUNT_CAP",
    "SECONDS_PER_COUNT",
    "SECONDS_PER_IMAGE",
    "CountAnnotation",
    "counts_from_ground_truth",
    "cap_counts",
]

# Counting interfaces top out at 15; anything larger clamps there.
COUNT_UI_CAP = 15
# Detection quality saturates once at most this many instances are requested
# per image and class, so capped counts are the default supervision.
DEFAULT_COUNT_CAP = 3

# Measured annotator response times in seconds, kept for documentation and
# cost estimates; nothing in the pipeline consumes them.
SECONDS_PER_COUNT = 0.90
SECONDS_PER_IMAGE = 1.48


@dataclass(frozen=True)
class CountAnnotation:
    """How many instances of one class an annotator reports in one image."""

    image_id: str
    class_id: str
    count: int

    def __post_init__(self) -> None:
        if not 0 <= self.count <= COUNT_UI_CAP:
            raise ValueError(
                f"count must be in [0, {COUNT_UI_CAP}], got {self.count}"
            )


def counts_from_ground_truth(
    gt_boxes: Mapping[str, Mapping[str, Sequence[Box]]]
) -> list[CountAnnotation]:
    """Derive count annotations from per-image, per-class ground-truth boxes.

    Counts above the interface cap clamp to it; classes listed with no boxes
    yield an explicit zero count.
    """
    return [
        CountAnnotation(image_id, class_id, min(len(boxes), COUNT_UI_CAP))
        for image_id, per_class in gt_boxes.items()
        for class_id, boxes in per_class.items()
    ]


def cap_counts(
    annotations: Sequence[CountAnnotation], k: int = DEFAULT_COUNT_CAP
) -> list[CountAnnotation]:
    """Clamp every annotation's count at ``k``; idempotent."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return [replace(a, count=min(a.count, k)) for a in annotations]
