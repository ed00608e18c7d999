"""The iterative self-training engine.

Each iteration detects on the unlabeled pool, suppresses duplicates,
filters pseudo-labels by confidence, withholds suspect images for human
review, promotes the rest into the training split, triggers retraining
through an external hook, and records validation metrics. Failures roll the
dataset and queue back to their pre-iteration snapshots.
"""

from __future__ import annotations

import json
import logging
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from autolabel import active
from autolabel.backends import BackendDescriptor, detect
from autolabel.dataset import DatasetStore, Instance
from autolabel.errors import BackendError, ValidationError
from autolabel.geometry import Detection, nms
from autolabel.metrics import MetricsReport, evaluate, outlier_filter
from autolabel.review import ReviewQueue

logger = logging.getLogger(__name__)

AUDIT_HEADER = "# autolabel-iterations v1"

ACTIVE_STRATEGIES = ("none", "alct", "uncertainty", "qbc")


@dataclass
class LoopConfig:
    backend: BackendDescriptor
    pseudo_confidence_threshold: float = 0.5
    nms_iou_threshold: float = 0.5
    eval_iou_threshold: float = 0.5
    max_iterations: int = 10
    min_new_pseudo_instances: int = 1
    active_strategy: str = "none"
    active_params: dict = field(default_factory=dict)
    retrain_hook: list[str] | None = None
    outlier_filtering: bool = True
    eval_map_50_95: bool = False

    def __post_init__(self):
        for t in (
            self.pseudo_confidence_threshold,
            self.nms_iou_threshold,
            self.eval_iou_threshold,
        ):
            if not 0.0 <= t <= 1.0:
                raise ValidationError(f"threshold must lie in [0, 1], got {t}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.min_new_pseudo_instances < 0:
            raise ValidationError("min_new_pseudo_instances must be >= 0")
        if self.active_strategy not in ACTIVE_STRATEGIES:
            raise ValidationError(f"unknown active strategy {self.active_strategy!r}")


@dataclass
class IterationRecord:
    iteration: int
    images_pseudo_labeled: int
    instances_promoted: int
    images_flagged: int
    corrections_absorbed: int
    overall_precision: float | None
    overall_recall: float | None
    overall_f1: float | None
    metrics_kv: str
    timings: dict[str, float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "images_pseudo_labeled": self.images_pseudo_labeled,
                "instances_promoted": self.instances_promoted,
                "images_flagged": self.images_flagged,
                "corrections_absorbed": self.corrections_absorbed,
                "overall_precision": self.overall_precision,
                "overall_recall": self.overall_recall,
                "overall_f1": self.overall_f1,
                "metrics_kv": self.metrics_kv,
                "timings": self.timings,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "IterationRecord":
        obj = json.loads(text)
        return cls(**obj)


def _active_flags(
    config: LoopConfig,
    detections: dict[str, list[Detection]],
    candidates: list,
) -> dict[str, float]:
    """image_id -> uncertainty score for the configured strategy."""
    params = config.active_params
    threshold = params.get("threshold", 0.5)
    if config.active_strategy == "none" or not candidates:
        return {}
    pool = {r.image_id: detections.get(r.image_id, []) for r in candidates}
    if config.active_strategy == "alct":
        flagged = active.alct_flag(pool, threshold)
        scores = {
            s.image_id: s.score
            for s in active.rank_uncertain(pool, threshold, len(pool))
        }
        return {image_id: scores.get(image_id, 0.0) for image_id in flagged}
    if config.active_strategy == "uncertainty":
        budget = params.get("budget", max(1, len(pool) // 10))
        ranked = active.rank_uncertain(pool, threshold, budget)
        return {s.image_id: s.score for s in ranked if s.score > 0}
    # qbc: detect with every committee member and score the spread
    committee: list[BackendDescriptor] = params.get("committee", [])
    if len(committee) < 2:
        raise ValidationError("qbc strategy needs a committee of >= 2 backends")
    disagreement_threshold = params.get("disagreement_threshold", 0.5)
    member_results = [detect(member, candidates) for member in committee]
    flagged = {}
    for record in candidates:
        votes = [res.get(record.image_id, []) for res in member_results]
        score = active.qbc_disagreement(votes, config.eval_iou_threshold)
        if score > disagreement_threshold:
            flagged[record.image_id] = score
    return flagged


def _run_retrain_hook(
    hook: list[str], store: DatasetStore, workdir: Path, iteration: int
) -> None:
    train_manifest = workdir / f"train-iter{iteration:03d}.manifest"
    val_manifest = workdir / f"val-iter{iteration:03d}.manifest"
    train_manifest.write_text(store.manifest_text(("train",)), encoding="utf-8")
    val_manifest.write_text(store.manifest_text(("val",)), encoding="utf-8")
    model_tag = f"iter{iteration:03d}"
    proc = subprocess.run(
        list(hook) + [str(train_manifest), str(val_manifest), model_tag],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise BackendError(
            f"retrain hook exited {proc.returncode}: {proc.stderr.strip()[-500:]}"
        )


def run_iteration(
    store: DatasetStore,
    config: LoopConfig,
    iteration: int,
    queue: ReviewQueue,
    workdir: str | Path,
) -> IterationRecord:
    """One detect/filter/promote/retrain/evaluate cycle.

    The dataset store and the review queue are snapshotted together; any
    failure (backend, validation, retrain hook) restores both exactly.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    started = time.monotonic()

    with store.transaction(), queue.transaction():
        blocked = queue.unresolved_image_ids()
        pool = [r for r in store.images("unlabeled") if r.image_id not in blocked]
        corrections = queue.resolved_unprocessed()
        if not pool and not corrections:
            raise ValidationError(
                "nothing to do: empty unlabeled pool and no pending corrections"
            )

        t0 = time.monotonic()
        train_size = len(store.images("train"))
        raw = detect(config.backend, pool, train_size=train_size)
        timings["detect_s"] = time.monotonic() - t0

        t0 = time.monotonic()
        filtered: dict[str, list[Detection]] = {}
        for record in pool:
            survivors = nms(raw.get(record.image_id, []), config.nms_iou_threshold)
            filtered[record.image_id] = [
                d for d in survivors if d.confidence >= config.pseudo_confidence_threshold
            ]
        timings["filter_s"] = time.monotonic() - t0

        flagged: dict[str, tuple[str, float]] = {}  # image_id -> (reason, score)
        if config.outlier_filtering and len(pool) >= 2:
            counts = {image_id: len(dets) for image_id, dets in filtered.items()}
            _, outliers = outlier_filter(counts)
            values = list(counts.values())
            mean = sum(values) / len(values)
            for image_id in outliers:
                flagged[image_id] = ("count_outlier", abs(counts[image_id] - mean))
        remaining = [r for r in pool if r.image_id not in flagged]
        for image_id, score in _active_flags(config, filtered, remaining).items():
            reason = (
                "committee_disagreement"
                if config.active_strategy == "qbc"
                else "low_confidence"
            )
            flagged[image_id] = (reason, score)

        for record in pool:
            if record.image_id in flagged:
                reason, score = flagged[record.image_id]
                queue.add(
                    image_id=record.image_id,
                    image_path=record.path,
                    predictions=filtered[record.image_id],
                    reason=reason,
                    iteration=iteration,
                    score=score,
                )

        t0 = time.monotonic()
        promoted_images = 0
        promoted_instances = 0
        for record in pool:
            if record.image_id in flagged:
                continue
            instances = [
                Instance(d.box, d.class_id, provenance="pseudo", source_iteration=iteration)
                for d in filtered[record.image_id]
            ]
            store.promote_pseudo(record.image_id, instances, iteration)
            promoted_images += 1
            promoted_instances += len(instances)
        for task in corrections:
            queue.mark_processed(task.task_id, iteration)
        timings["promote_s"] = time.monotonic() - t0

        if config.retrain_hook:
            t0 = time.monotonic()
            _run_retrain_hook(config.retrain_hook, store, workdir, iteration)
            timings["retrain_s"] = time.monotonic() - t0

        t0 = time.monotonic()
        val_records = store.images("val")
        report: MetricsReport | None = None
        if val_records:
            val_detections = detect(
                config.backend, val_records, train_size=len(store.images("train"))
            )
            report = evaluate(
                val_detections,
                val_records,
                store.classes,
                iou_threshold=config.eval_iou_threshold,
                confidence_threshold=config.pseudo_confidence_threshold,
                with_map_50_95=config.eval_map_50_95,
            )
        timings["evaluate_s"] = time.monotonic() - t0
        timings["total_s"] = time.monotonic() - started

        return IterationRecord(
            iteration=iteration,
            images_pseudo_labeled=promoted_images,
            instances_promoted=promoted_instances,
            images_flagged=len(flagged),
            corrections_absorbed=len(corrections),
            overall_precision=report.overall.precision if report else None,
            overall_recall=report.overall.recall if report else None,
            overall_f1=report.overall.f1 if report else None,
            metrics_kv=report.to_kv() if report else "",
            timings=timings,
        )


class AuditTrail:
    """Line-delimited persistence of iteration records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, record: IterationRecord) -> None:
        if not self.path.exists():
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(AUDIT_HEADER + "\n", encoding="utf-8")
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(record.to_json() + "\n")

    def raw_line(self, iteration: int) -> str | None:
        if not self.path.exists():
            return None
        for line in self.path.read_text(encoding="utf-8").splitlines()[1:]:
            if line.strip() and json.loads(line)["iteration"] == iteration:
                return line
        return None

    def records(self) -> list[IterationRecord]:
        if not self.path.exists():
            return []
        lines = self.path.read_text(encoding="utf-8").splitlines()[1:]
        return [IterationRecord.from_json(line) for line in lines if line.strip()]


def run_loop(
    store: DatasetStore,
    config: LoopConfig,
    queue: ReviewQueue | None = None,
    workdir: str | Path = "runs/loop",
    on_iteration=None,
) -> list[IterationRecord]:
    """Iterate until max_iterations, an exhausted pool, or a promotion floor.

    An iteration runs only while there are detectable unlabeled images or
    resolved-but-unabsorbed corrections; an empty pool up front yields an
    empty record list.
    """
    queue = queue if queue is not None else ReviewQueue()
    workdir = Path(workdir)
    trail = AuditTrail(workdir / "iterations.jsonl")
    records: list[IterationRecord] = []
    for iteration in range(1, config.max_iterations + 1):
        blocked = queue.unresolved_image_ids()
        pool = [r for r in store.images("unlabeled") if r.image_id not in blocked]
        if not pool and not queue.resolved_unprocessed():
            break
        record = run_iteration(store, config, iteration, queue, workdir)
        trail.append(record)
        records.append(record)
        if on_iteration:
            on_iteration(record)
        if record.instances_promoted < config.min_new_pseudo_instances:
            logger.info(
                "stopping: %d new pseudo instances below floor %d",
                record.instances_promoted,
                config.min_new_pseudo_instances,
            )
            break
    return records
