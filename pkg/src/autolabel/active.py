"""Active-learning strategies and the annotation-cost model.

Four ways of deciding which images deserve human eyes: confidence-threshold
flagging, uncertainty ranking, committee disagreement, and the count-outlier
filter (in :mod:`autolabel.metrics`). All functions here are pure; queue
insertion is the service's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from autolabel.errors import ValidationError
from autolabel.geometry import Detection
from autolabel.metrics import match_image

SCORE_BASES = (
    "low_confidence_fraction",
    "min_confidence",
    "committee_disagreement",
    "count_outlier",
)


@dataclass(frozen=True)
class UncertaintyScore:
    image_id: str
    score: float
    basis: str

    def __post_init__(self):
        if not math.isfinite(self.score) or self.score < 0:
            raise ValidationError(f"score must be finite and >= 0, got {self.score}")
        if self.basis not in SCORE_BASES:
            raise ValidationError(f"unknown score basis {self.basis!r}")


@dataclass(frozen=True)
class CostModel:
    """Per-image annotation timings in seconds, plus the working-day length."""

    seconds_per_image_manual: float = 141.66
    seconds_per_image_review: float = 28.65
    machine_seconds_per_image: float = 0.0008
    workday_hours: float = 8.0

    def __post_init__(self):
        if self.seconds_per_image_manual <= 0 or self.seconds_per_image_review <= 0:
            raise ValidationError("per-image labeling times must be positive")
        if self.machine_seconds_per_image < 0:
            raise ValidationError("machine time must be >= 0")
        if self.workday_hours <= 0:
            raise ValidationError("workday_hours must be positive")


@dataclass(frozen=True)
class CostReport:
    n_images: int
    review_fraction: float
    manual_total_hours: float
    hybrid_total_hours: float
    machine_hours: float
    working_days_manual: int
    working_days_hybrid: int
    savings_fraction: float
    savings_defined: bool

    def to_text(self) -> str:
        lines = [
            f"images: {self.n_images}",
            f"review fraction: {self.review_fraction:g}",
            f"manual labeling: {self.manual_total_hours:.2f} h"
            f" ({self.working_days_manual} working days)",
            f"hybrid labeling: {self.hybrid_total_hours:.2f} h"
            f" ({self.working_days_hybrid} working days)",
            f"machine time: {self.machine_hours:.6f} h",
        ]
        if self.savings_defined:
            lines.append(f"time saved: {100 * self.savings_fraction:.1f}%")
        else:
            lines.append("time saved: 0.0% (no images, savings undefined)")
        return "\n".join(lines) + "\n"


def alct_flag(
    detections_per_image: dict[str, list[Detection]], threshold: float
) -> list[str]:
    """Images containing at least one detection below the confidence threshold.

    Flagged images go back to the review queue instead of being promoted.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    return sorted(
        image_id
        for image_id, dets in detections_per_image.items()
        if any(d.confidence < threshold for d in dets)
    )


def rank_uncertain(
    detections_per_image: dict[str, list[Detection]],
    threshold: float,
    budget: int,
) -> list[UncertaintyScore]:
    """Top-``budget`` images by fraction of sub-threshold detections.

    Images with no detections at all score 1.0 (nothing confident about
    them). Ties break by ascending minimum confidence, then image_id, so the
    ordering is a stable total order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    if budget < 0:
        raise ValidationError(f"budget must be >= 0, got {budget}")
    scored = []
    for image_id, dets in detections_per_image.items():
        if dets:
            score = sum(1 for d in dets if d.confidence < threshold) / len(dets)
            min_conf = min(d.confidence for d in dets)
        else:
            score, min_conf = 1.0, 0.0
        scored.append((score, min_conf, image_id))
    scored.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [
        UncertaintyScore(image_id, score, "low_confidence_fraction")
        for score, _, image_id in scored[:budget]
    ]


def _pair_agreement(
    reference: list[Detection], other: list[Detection], iou_threshold: float
) -> float:
    """F1 of greedily matching ``other`` against ``reference`` (class-aware)."""
    if not reference and not other:
        return 1.0
    part = match_image(other, reference, iou_threshold, 0.0)
    tp = sum(part.tp.values())
    fp = sum(part.fp.values())
    fn = sum(part.fn.values())
    if 2 * tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def _canonical_key(dets: list[Detection]) -> tuple:
    return tuple(
        sorted((d.class_id, d.confidence) + d.box.as_tuple() for d in dets)
    )


def qbc_disagreement(
    committee: list[list[Detection]], iou_threshold: float = 0.5
) -> float:
    """1 minus the mean pairwise agreement across committee members.

    Pairwise agreement is the F1 of matching one member's detections against
    the other's. Within each pair the member with the smaller canonical
    detection-set key acts as reference, which keeps the value independent
    of committee ordering.
    """
    if len(committee) < 2:
        raise ValidationError(f"committee needs >= 2 members, got {len(committee)}")
    agreements = []
    for i in range(len(committee)):
        for j in range(i + 1, len(committee)):
            a, b = committee[i], committee[j]
            if _canonical_key(b) < _canonical_key(a):
                a, b = b, a
            agreements.append(_pair_agreement(a, b, iou_threshold))
    disagreement = 1.0 - sum(agreements) / len(agreements)
    return min(1.0, max(0.0, disagreement))


def annotation_cost(
    n_images: int, cost: CostModel | None = None, review_fraction: float = 1.0
) -> CostReport:
    """Compare full manual labeling with machine labeling plus partial review.

    Working days are whole days: total hours divided by the workday length,
    rounded up. With zero images the savings fraction is undefined and
    reported as 0 with ``savings_defined`` false.
    """
    if n_images < 0:
        raise ValidationError(f"n_images must be >= 0, got {n_images}")
    if not 0.0 <= review_fraction <= 1.0:
        raise ValidationError(f"review_fraction must lie in [0, 1], got {review_fraction}")
    cost = cost or CostModel()
    manual_hours = n_images * cost.seconds_per_image_manual / 3600
    machine_hours = n_images * cost.machine_seconds_per_image / 3600
    review_hours = n_images * review_fraction * cost.seconds_per_image_review / 3600
    hybrid_hours = machine_hours + review_hours
    if manual_hours > 0:
        savings = 1.0 - hybrid_hours / manual_hours
        savings_defined = True
    else:
        savings = 0.0
        savings_defined = False
    return CostReport(
        n_images=n_images,
        review_fraction=review_fraction,
        manual_total_hours=manual_hours,
        hybrid_total_hours=hybrid_hours,
        machine_hours=machine_hours,
        working_days_manual=math.ceil(manual_hours / cost.workday_hours),
        working_days_hybrid=math.ceil(hybrid_hours / cost.workday_hours),
        savings_fraction=savings,
        savings_defined=savings_defined,
    )
