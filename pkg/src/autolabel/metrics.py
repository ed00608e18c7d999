"""Prediction-to-ground-truth matching and the detection evaluation suite.

Rates are kept in [0, 1] internally; rendering multiplies by 100 with one
decimal. A metric whose denominator is empty is undefined, represented as
``None`` in memory and as the literal token ``undefined`` in serialized
reports. Averages skip undefined entries and say so rather than fabricating
numbers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from autolabel.dataset import ClassTable, ImageRecord
from autolabel.errors import ValidationError
from autolabel.geometry import Detection, iou

logger = logging.getLogger(__name__)

UNDEFINED_TOKEN = "undefined"

BACKGROUND = "background"

MAP_50_95_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


@dataclass(frozen=True)
class DetectionOutcome:
    """One detection's fate in a matching run."""

    image_id: str
    detection: Detection
    matched_gt: int | None  # index into the image's ground-truth list
    iou: float


@dataclass
class MatchResult:
    """Greedy confidence-ordered matching of detections against ground truth.

    ``outcomes`` covers the class-aware matching that feeds TP/FP/FN;
    ``confusion_pairs`` comes from a class-blind pass run first so that
    cross-class hits are visible to the confusion matrix. Entries are
    (true_class | None, predicted_class | None) with None standing for
    background.
    """

    iou_threshold: float
    confidence_threshold: float
    outcomes: list[DetectionOutcome]
    tp: dict[int, int]
    fp: dict[int, int]
    fn: dict[int, int]
    gt_count: dict[int, int]
    confusion_pairs: list[tuple[int | None, int | None]]
    n_images: int = 0

    def counts(self, class_id: int) -> tuple[int, int, int]:
        return (
            self.tp.get(class_id, 0),
            self.fp.get(class_id, 0),
            self.fn.get(class_id, 0),
        )


def _greedy_pairs(
    detections: list[Detection],
    gt_boxes: list,
    gt_classes: list[int],
    iou_threshold: float,
    class_aware: bool,
) -> list[tuple[int, int | None, float]]:
    """(detection index, matched gt index | None, iou) in descending confidence."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    taken = [False] * len(gt_boxes)
    pairs = []
    for i in order:
        det = detections[i]
        best_j, best_iou = None, 0.0
        for j, gt_box in enumerate(gt_boxes):
            if taken[j]:
                continue
            if class_aware and gt_classes[j] != det.class_id:
                continue
            overlap = iou(det.box, gt_box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j is not None:
            taken[best_j] = True
        pairs.append((i, best_j, best_iou))
    return pairs


def match_image(
    detections: list[Detection],
    ground_truth: list,
    iou_threshold: float,
    confidence_threshold: float = 0.0,
    image_id: str = "",
) -> MatchResult:
    """Match one image's detections against its ground-truth instances."""
    for t in (iou_threshold, confidence_threshold):
        if not 0.0 <= t <= 1.0:
            raise ValidationError(f"threshold must lie in [0, 1], got {t}")
    kept = [d for d in detections if d.confidence >= confidence_threshold]
    gt_boxes = [g.box for g in ground_truth]
    gt_classes = [g.class_id for g in ground_truth]

    result = MatchResult(
        iou_threshold=iou_threshold,
        confidence_threshold=confidence_threshold,
        outcomes=[],
        tp={},
        fp={},
        fn={},
        gt_count={},
        confusion_pairs=[],
        n_images=1,
    )
    for c in gt_classes:
        result.gt_count[c] = result.gt_count.get(c, 0) + 1

    # Class-blind pass first: cross-class overlaps feed the confusion matrix
    # before the class-aware matching below discards them.
    blind = _greedy_pairs(kept, gt_boxes, gt_classes, iou_threshold, class_aware=False)
    matched_gt_blind = set()
    for i, j, _ in blind:
        if j is None:
            result.confusion_pairs.append((None, kept[i].class_id))
        else:
            matched_gt_blind.add(j)
            result.confusion_pairs.append((gt_classes[j], kept[i].class_id))
    for j, c in enumerate(gt_classes):
        if j not in matched_gt_blind:
            result.confusion_pairs.append((c, None))

    aware = _greedy_pairs(kept, gt_boxes, gt_classes, iou_threshold, class_aware=True)
    matched_gt = set()
    for i, j, overlap in aware:
        det = kept[i]
        result.outcomes.append(DetectionOutcome(image_id, det, j, overlap))
        if j is None:
            result.fp[det.class_id] = result.fp.get(det.class_id, 0) + 1
        else:
            matched_gt.add(j)
            result.tp[det.class_id] = result.tp.get(det.class_id, 0) + 1
    for j, c in enumerate(gt_classes):
        if j not in matched_gt:
            result.fn[c] = result.fn.get(c, 0) + 1
    return result


def match(
    detections_by_image: dict[str, list[Detection]],
    ground_truth_by_image: dict[str, list],
    iou_threshold: float,
    confidence_threshold: float = 0.0,
) -> MatchResult:
    """Aggregate matching over a set of images.

    Images appearing in either mapping are evaluated; a missing side is the
    empty list. Aggregation is a sum over per-image results, so permuting
    images changes nothing.
    """
    total = MatchResult(
        iou_threshold=iou_threshold,
        confidence_threshold=confidence_threshold,
        outcomes=[],
        tp={},
        fp={},
        fn={},
        gt_count={},
        confusion_pairs=[],
    )
    image_ids = sorted(set(detections_by_image) | set(ground_truth_by_image))
    for image_id in image_ids:
        part = match_image(
            detections_by_image.get(image_id, []),
            ground_truth_by_image.get(image_id, []),
            iou_threshold,
            confidence_threshold,
            image_id=image_id,
        )
        total.outcomes.extend(part.outcomes)
        total.confusion_pairs.extend(part.confusion_pairs)
        for src, dst in (
            (part.tp, total.tp),
            (part.fp, total.fp),
            (part.fn, total.fn),
            (part.gt_count, total.gt_count),
        ):
            for c, n in src.items():
                dst[c] = dst.get(c, 0) + n
        total.n_images += 1
    return total


# ---------------------------------------------------------------------------
# Scalar metrics


def precision_recall_f1(
    tp: int, fp: int, fn: int
) -> tuple[float | None, float | None, float | None]:
    if min(tp, fp, fn) < 0:
        raise ValidationError("counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp > 0 else None
    recall = tp / (tp + fn) if tp + fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def fnr(tp: int, fn: int) -> float | None:
    if tp < 0 or fn < 0:
        raise ValidationError("counts must be nonnegative")
    if tp + fn == 0:
        return None
    return fn / (fn + tp)


def recall_fnr_consistent(
    recall_pct: float, fnr_pct: float, tolerance_pp: float = 0.1
) -> bool:
    """Check the complement identity FNR = 100 - recall on percent values."""
    return abs((recall_pct + fnr_pct) - 100.0) <= tolerance_pp + 1e-12


def count_errors(
    true_counts: list[float], predicted_counts: list[float]
) -> tuple[float, float, float]:
    """(MAE, MSE, RMSE) over paired per-image counts."""
    if len(true_counts) != len(predicted_counts):
        raise ValidationError("count sequences must have equal length")
    if not true_counts:
        raise ValidationError("count sequences must be nonempty")
    diffs = [t - p for t, p in zip(true_counts, predicted_counts)]
    mae = sum(abs(d) for d in diffs) / len(diffs)
    mse = sum(d * d for d in diffs) / len(diffs)
    return mae, mse, math.sqrt(mse)


# ---------------------------------------------------------------------------
# Average precision


def average_precision(
    detections_by_image: dict[str, list[Detection]],
    ground_truth_by_image: dict[str, list],
    class_id: int,
    iou_threshold: float,
) -> float | None:
    """AP for one class by sweeping the confidence ranking.

    Precision-recall points are accumulated at each distinct confidence
    level (so equal-confidence detections enter together and ordering
    between them cannot matter), the monotone-decreasing precision envelope
    is applied, and the curve is integrated over recall exactly. Undefined
    (None) when the class has no ground-truth instance.
    """
    n_gt = 0
    flags: list[tuple[float, bool]] = []  # (confidence, is_tp)
    for image_id in sorted(set(detections_by_image) | set(ground_truth_by_image)):
        dets = [
            d for d in detections_by_image.get(image_id, []) if d.class_id == class_id
        ]
        gts = [g for g in ground_truth_by_image.get(image_id, []) if g.class_id == class_id]
        n_gt += len(gts)
        part = match_image(dets, gts, iou_threshold, 0.0, image_id=image_id)
        for outcome in part.outcomes:
            flags.append((outcome.detection.confidence, outcome.matched_gt is not None))
    if n_gt == 0:
        return None
    if not flags:
        return 0.0
    flags.sort(key=lambda pair: -pair[0])
    points: list[tuple[float, float]] = []  # (recall, precision)
    tp = fp = 0
    i = 0
    while i < len(flags):
        j = i
        while j < len(flags) and flags[j][0] == flags[i][0]:
            tp += flags[j][1]
            fp += not flags[j][1]
            j += 1
        points.append((tp / n_gt, tp / (tp + fp)))
        i = j
    return _area_under_envelope(points)


def _area_under_envelope(points: list[tuple[float, float]]) -> float:
    """Exact area under the monotone precision envelope of a P-R polyline."""
    envelope: list[tuple[float, float]] = []
    best = 0.0
    for recall, precision in reversed(points):
        best = max(best, precision)
        envelope.append((recall, best))
    envelope.reverse()
    area = 0.0
    prev_recall = 0.0
    for recall, precision in envelope:
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def mean_average_precision(
    detections_by_image: dict[str, list[Detection]],
    ground_truth_by_image: dict[str, list],
    classes: ClassTable,
    iou_threshold: float = 0.5,
) -> tuple[float | None, dict[int, float | None]]:
    """Mean of per-class APs; classes without ground truth are skipped with a warning."""
    per_class: dict[int, float | None] = {}
    for class_id in range(len(classes)):
        ap = average_precision(
            detections_by_image, ground_truth_by_image, class_id, iou_threshold
        )
        if ap is None:
            logger.warning(
                "class %r has no ground-truth instances; AP undefined and excluded from the mean",
                classes.name(class_id),
            )
        per_class[class_id] = ap
    defined = [v for v in per_class.values() if v is not None]
    mean = sum(defined) / len(defined) if defined else None
    return mean, per_class


def map_50_95(
    detections_by_image: dict[str, list[Detection]],
    ground_truth_by_image: dict[str, list],
    classes: ClassTable,
) -> tuple[float | None, dict[int, float | None]]:
    """Mean AP over IoU thresholds 0.50 to 0.95 in steps of 0.05."""
    per_class_values: dict[int, list[float]] = {c: [] for c in range(len(classes))}
    has_gt = {c: False for c in range(len(classes))}
    for threshold in MAP_50_95_THRESHOLDS:
        for class_id in range(len(classes)):
            ap = average_precision(
                detections_by_image, ground_truth_by_image, class_id, threshold
            )
            if ap is not None:
                has_gt[class_id] = True
                per_class_values[class_id].append(ap)
    per_class: dict[int, float | None] = {
        c: (sum(vals) / len(vals) if has_gt[c] else None)
        for c, vals in per_class_values.items()
    }
    defined = [v for v in per_class.values() if v is not None]
    mean = sum(defined) / len(defined) if defined else None
    return mean, per_class


# ---------------------------------------------------------------------------
# Confusion matrix and count-outlier filter


@dataclass
class ConfusionMatrix:
    """Counts over true rows and predicted columns, classes plus background."""

    labels: tuple[str, ...]  # class names followed by "background"
    cells: list[list[int]]

    def value(self, true_label: str, predicted_label: str) -> int:
        return self.cells[self.labels.index(true_label)][self.labels.index(predicted_label)]

    def off_diagonal_total(self) -> int:
        return sum(
            self.cells[i][j]
            for i in range(len(self.labels))
            for j in range(len(self.labels))
            if i != j
        )

    def to_grid(self) -> str:
        lines = ["true\\predicted\t" + "\t".join(self.labels)]
        for label, row in zip(self.labels, self.cells):
            lines.append(label + "\t" + "\t".join(str(v) for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(result: MatchResult, classes: ClassTable) -> ConfusionMatrix:
    labels = tuple(classes.names) + (BACKGROUND,)
    n = len(labels)
    cells = [[0] * n for _ in range(n)]
    background = n - 1
    for true_c, pred_c in result.confusion_pairs:
        row = background if true_c is None else true_c
        col = background if pred_c is None else pred_c
        cells[row][col] += 1
    return ConfusionMatrix(labels, cells)


def outlier_filter(per_image_counts: dict[str, int]) -> tuple[list[str], list[str]]:
    """Split image ids into (kept, flagged) by the mean +/- 2 sample-std band.

    Flagged images are expected to be routed to review, never dropped.
    """
    if len(per_image_counts) < 2:
        raise ValidationError("outlier filter needs at least 2 images")
    ids = sorted(per_image_counts)
    values = [per_image_counts[i] for i in ids]
    n = len(values)
    mean = sum(values) / n
    variance = sum((v - mean) ** 2 for v in values) / (n - 1)
    spread = math.sqrt(variance)
    lo, hi = mean - 2 * spread, mean + 2 * spread
    kept = [i for i, v in zip(ids, values) if lo <= v <= hi]
    flagged = [i for i, v in zip(ids, values) if not lo <= v <= hi]
    return kept, flagged


# ---------------------------------------------------------------------------
# Report


@dataclass
class ClassMetrics:
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    ap50: float | None = None
    map50_95: float | None = None
    mae: float | None = None
    mse: float | None = None
    rmse: float | None = None
    fnr: float | None = None
    tp: int = 0
    fp: int = 0
    fn: int = 0
    gt: int = 0


@dataclass
class MetricsReport:
    classes: ClassTable
    per_class: dict[str, ClassMetrics]
    overall: ClassMetrics
    confusion: ConfusionMatrix
    n_images: int
    iou_threshold: float
    confidence_threshold: float
    excluded_from_means: list[str] = field(default_factory=list)

    FIELDS = ("precision", "recall", "f1", "ap50", "map50_95", "mae", "mse", "rmse", "fnr")
    PERCENT_FIELDS = ("precision", "recall", "f1", "ap50", "map50_95", "fnr")

    def to_kv(self) -> str:
        """Machine-readable key=value lines, raw rates, stable order."""

        def fmt(v: float | None) -> str:
            return UNDEFINED_TOKEN if v is None else repr(v)

        lines = [
            f"n_images={self.n_images}",
            f"iou_threshold={self.iou_threshold!r}",
            f"confidence_threshold={self.confidence_threshold!r}",
        ]
        for name in list(self.classes.names) + ["overall"]:
            m = self.per_class[name] if name != "overall" else self.overall
            for field_name in self.FIELDS:
                lines.append(f"{name}.{field_name}={fmt(getattr(m, field_name))}")
            lines.append(f"{name}.tp={m.tp}")
            lines.append(f"{name}.fp={m.fp}")
            lines.append(f"{name}.fn={m.fn}")
            lines.append(f"{name}.gt={m.gt}")
        if self.excluded_from_means:
            lines.append("excluded_from_means=" + ",".join(self.excluded_from_means))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Human-readable table; rates rendered as percentages with one decimal."""

        def cell(field_name: str, v: float | None) -> str:
            if v is None:
                return "Undefined"
            if field_name in self.PERCENT_FIELDS:
                return f"{100 * v:.1f}"
            return f"{v:.2f}"

        header = ["class"] + list(self.FIELDS)
        rows = [header]
        for name in list(self.classes.names) + ["overall"]:
            m = self.per_class[name] if name != "overall" else self.overall
            rows.append([name] + [cell(f, getattr(m, f)) for f in self.FIELDS])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append("")
        lines.append(f"images evaluated: {self.n_images}")
        lines.append(
            f"thresholds: iou={self.iou_threshold} confidence={self.confidence_threshold}"
        )
        if self.excluded_from_means:
            lines.append(
                "excluded from means (undefined): " + ", ".join(self.excluded_from_means)
            )
        lines.append("")
        lines.append(self.confusion.to_grid().rstrip("\n"))
        return "\n".join(lines) + "\n"


def _mean_defined(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def evaluate(
    detections_by_image: dict[str, list[Detection]],
    records: list[ImageRecord],
    classes: ClassTable,
    iou_threshold: float = 0.5,
    confidence_threshold: float = 0.5,
    with_map_50_95: bool = True,
) -> MetricsReport:
    """Full evaluation of detections against the records' instances.

    Per-class precision/recall/F1/FNR come from counts at the given
    thresholds. AP sweeps the full ranking without the confidence cutoff.
    Count errors (MAE/MSE/RMSE) compare per-image instance counts of the
    thresholded detections; the overall row uses per-image totals so that
    RMSE stays the exact square root of MSE. Overall rate metrics are means
    over classes with defined values; exclusions are recorded.
    """
    ground_truth = {r.image_id: list(r.instances) for r in records}
    result = match(detections_by_image, ground_truth, iou_threshold, confidence_threshold)
    ap50_mean, ap50_by_class = mean_average_precision(
        detections_by_image, ground_truth, classes, 0.5
    )
    if with_map_50_95:
        map_mean, map_by_class = map_50_95(detections_by_image, ground_truth, classes)
    else:
        map_mean, map_by_class = None, {c: None for c in range(len(classes))}

    image_ids = sorted(ground_truth)
    kept_by_image = {
        i: [d for d in detections_by_image.get(i, []) if d.confidence >= confidence_threshold]
        for i in image_ids
    }

    per_class: dict[str, ClassMetrics] = {}
    excluded: list[str] = []
    for class_id, name in enumerate(classes.names):
        tp, fp, fn_count = result.counts(class_id)
        precision, recall, f1 = precision_recall_f1(tp, fp, fn_count)
        true_counts = [
            sum(1 for g in ground_truth[i] if g.class_id == class_id) for i in image_ids
        ]
        pred_counts = [
            sum(1 for d in kept_by_image[i] if d.class_id == class_id) for i in image_ids
        ]
        mae, mse, rmse = count_errors(true_counts, pred_counts)
        per_class[name] = ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            ap50=ap50_by_class[class_id],
            map50_95=map_by_class[class_id],
            mae=mae,
            mse=mse,
            rmse=rmse,
            fnr=fnr(tp, fn_count),
            tp=tp,
            fp=fp,
            fn=fn_count,
            gt=result.gt_count.get(class_id, 0),
        )
        for field_name in MetricsReport.PERCENT_FIELDS:
            if getattr(per_class[name], field_name) is None:
                excluded.append(f"{name}.{field_name}")

    true_totals = [len(ground_truth[i]) for i in image_ids]
    pred_totals = [len(kept_by_image[i]) for i in image_ids]
    if image_ids:
        overall_mae, overall_mse, overall_rmse = count_errors(true_totals, pred_totals)
    else:
        overall_mae = overall_mse = overall_rmse = None
    rows = [per_class[n] for n in classes.names]
    overall = ClassMetrics(
        precision=_mean_defined([m.precision for m in rows]),
        recall=_mean_defined([m.recall for m in rows]),
        f1=_mean_defined([m.f1 for m in rows]),
        ap50=ap50_mean,
        map50_95=map_mean,
        mae=overall_mae,
        mse=overall_mse,
        rmse=overall_rmse,
        fnr=_mean_defined([m.fnr for m in rows]),
        tp=sum(m.tp for m in rows),
        fp=sum(m.fp for m in rows),
        fn=sum(m.fn for m in rows),
        gt=sum(m.gt for m in rows),
    )
    return MetricsReport(
        classes=classes,
        per_class=per_class,
        overall=overall,
        confusion=confusion_matrix(result, classes),
        n_images=len(image_ids),
        iou_threshold=iou_threshold,
        confidence_threshold=confidence_threshold,
        excluded_from_means=excluded,
    )
