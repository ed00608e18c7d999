"""Review tasks and the file-backed queue feeding the human loop."""

from __future__ import annotations

import json
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

from autolabel.dataset import Instance
from autolabel.errors import FormatError, ValidationError
from autolabel.geometry import BoundingBox, Detection

TASK_REASONS = ("low_confidence", "count_outlier", "committee_disagreement")
TASK_STATES = ("pending", "in_review", "resolved")

QUEUE_HEADER = "# autolabel-tasks v1"


@dataclass(frozen=True)
class ReviewTask:
    """One flagged image awaiting human accept/correct/reject."""

    task_id: str
    image_id: str
    image_path: str
    predictions: tuple[Detection, ...]
    reason: str
    iteration: int
    score: float = 0.0
    state: str = "pending"
    resolution: tuple[Instance, ...] | None = None
    processed_iteration: int | None = None

    def __post_init__(self):
        if self.reason not in TASK_REASONS:
            raise ValidationError(f"unknown task reason {self.reason!r}")
        if self.state not in TASK_STATES:
            raise ValidationError(f"unknown task state {self.state!r}")
        if self.state == "resolved" and self.resolution is None:
            raise ValidationError("resolved tasks must carry a resolution (possibly empty)")
        if self.iteration < 1:
            raise ValidationError("tasks reference a loop iteration >= 1")


def _detection_to_obj(det: Detection) -> dict:
    return {
        "box": list(det.box.as_tuple()),
        "class_id": det.class_id,
        "confidence": det.confidence,
    }


def _detection_from_obj(obj: dict) -> Detection:
    return Detection(BoundingBox(*obj["box"]), obj["class_id"], obj["confidence"])


def _task_to_obj(task: ReviewTask) -> dict:
    return {
        "task_id": task.task_id,
        "image_id": task.image_id,
        "image_path": task.image_path,
        "predictions": [_detection_to_obj(d) for d in task.predictions],
        "reason": task.reason,
        "iteration": task.iteration,
        "score": task.score,
        "state": task.state,
        "resolution": None
        if task.resolution is None
        else [
            {
                "box": list(i.box.as_tuple()),
                "class_id": i.class_id,
                "provenance": i.provenance,
                "source_iteration": i.source_iteration,
            }
            for i in task.resolution
        ],
        "processed_iteration": task.processed_iteration,
    }


def _task_from_obj(obj: dict) -> ReviewTask:
    resolution = obj.get("resolution")
    return ReviewTask(
        task_id=obj["task_id"],
        image_id=obj["image_id"],
        image_path=obj.get("image_path", ""),
        predictions=tuple(_detection_from_obj(d) for d in obj["predictions"]),
        reason=obj["reason"],
        iteration=obj["iteration"],
        score=obj.get("score", 0.0),
        state=obj["state"],
        resolution=None
        if resolution is None
        else tuple(
            Instance(
                box=BoundingBox(*i["box"]),
                class_id=i["class_id"],
                provenance=i.get("provenance", "corrected"),
                source_iteration=i.get("source_iteration", obj["iteration"]),
            )
            for i in resolution
        ),
        processed_iteration=obj.get("processed_iteration"),
    )


class ReviewQueue:
    """Task store with compare-and-set claims and serialized writes."""

    def __init__(self, path: str | Path | None = None):
        self._tasks: dict[str, ReviewTask] = {}
        self._lock = threading.RLock()
        self._counter = 0
        self.path = Path(path) if path else None

    def __len__(self) -> int:
        return len(self._tasks)

    def get(self, task_id: str) -> ReviewTask:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise ValidationError(f"unknown task {task_id!r}") from None

    def add(
        self,
        image_id: str,
        image_path: str,
        predictions: list[Detection],
        reason: str,
        iteration: int,
        score: float = 0.0,
    ) -> ReviewTask:
        with self._lock:
            self._counter += 1
            task = ReviewTask(
                task_id=f"task-{self._counter:06d}",
                image_id=image_id,
                image_path=image_path,
                predictions=tuple(predictions),
                reason=reason,
                iteration=iteration,
                score=score,
            )
            self._tasks[task.task_id] = task
            self.save()
            return task

    def list_tasks(
        self,
        state: str | None = None,
        reason: str | None = None,
        iteration: int | None = None,
        page: int = 1,
        page_size: int = 20,
    ) -> tuple[list[ReviewTask], int]:
        """Filtered tasks ordered by descending score then task_id; (page, total)."""
        if state is not None and state not in TASK_STATES:
            raise ValidationError(f"unknown task state {state!r}")
        if reason is not None and reason not in TASK_REASONS:
            raise ValidationError(f"unknown task reason {reason!r}")
        if page < 1 or page_size < 1:
            raise ValidationError("page and page_size must be >= 1")
        tasks = [
            t
            for t in self._tasks.values()
            if (state is None or t.state == state)
            and (reason is None or t.reason == reason)
            and (iteration is None or t.iteration == iteration)
        ]
        tasks.sort(key=lambda t: (-t.score, t.task_id))
        start = (page - 1) * page_size
        return tasks[start : start + page_size], len(tasks)

    def claim(self, task_id: str) -> ReviewTask:
        """pending -> in_review; anything else conflicts."""
        with self._lock:
            task = self.get(task_id)
            if task.state != "pending":
                raise ConflictError(f"task {task_id} is {task.state}, not pending")
            task = replace(task, state="in_review")
            self._tasks[task_id] = task
            self.save()
            return task

    def resolve(self, task_id: str, resolution: tuple[Instance, ...]) -> ReviewTask:
        with self._lock:
            task = self.get(task_id)
            if task.state == "resolved":
                raise AlreadyResolvedError(f"task {task_id} already resolved")
            if task.state != "in_review":
                raise ConflictError(f"task {task_id} is {task.state}, not in_review")
            task = replace(task, state="resolved", resolution=resolution)
            self._tasks[task_id] = task
            self.save()
            return task

    def mark_processed(self, task_id: str, iteration: int) -> None:
        with self._lock:
            task = self.get(task_id)
            self._tasks[task_id] = replace(task, processed_iteration=iteration)
            self.save()

    def unresolved_image_ids(self) -> set[str]:
        return {t.image_id for t in self._tasks.values() if t.state != "resolved"}

    def resolved_unprocessed(self) -> list[ReviewTask]:
        return sorted(
            (
                t
                for t in self._tasks.values()
                if t.state == "resolved" and t.processed_iteration is None
            ),
            key=lambda t: t.task_id,
        )

    # -- persistence --------------------------------------------------------

    def serialize(self) -> str:
        lines = [QUEUE_HEADER, json.dumps({"counter": self._counter})]
        for task_id in sorted(self._tasks):
            lines.append(json.dumps(_task_to_obj(self._tasks[task_id]), sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str, path: str | Path | None = None) -> "ReviewQueue":
        lines = text.splitlines()
        if not lines or lines[0] != QUEUE_HEADER:
            raise FormatError(f"missing queue header {QUEUE_HEADER!r}", 1)
        queue = cls(path=path)
        queue._counter = json.loads(lines[1])["counter"] if len(lines) > 1 else 0
        for line in lines[2:]:
            if not line.strip():
                continue
            task = _task_from_obj(json.loads(line))
            queue._tasks[task.task_id] = task
        return queue

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path) if path else self.path
        if target is None:
            return
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(self.serialize(), encoding="utf-8")
        tmp.replace(target)

    @classmethod
    def load(cls, path: str | Path) -> "ReviewQueue":
        return cls.deserialize(Path(path).read_text(encoding="utf-8"), path=path)

    @contextmanager
    def transaction(self):
        """Restore the queue on error, mirroring the dataset store."""
        with self._lock:
            snapshot = self.serialize()
            try:
                yield self
            except BaseException:
                restored = ReviewQueue.deserialize(snapshot)
                self._tasks = restored._tasks
                self._counter = restored._counter
                raise
            else:
                self.save()


class ConflictError(ValidationError):
    """A state transition raced with another actor."""


class AlreadyResolvedError(ConflictError):
    """Resolution was already recorded; retries are acknowledged idempotently."""
