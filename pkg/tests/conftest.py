"""Shared generators and reference implementations for the test suite."""

from __future__ import annotations

import math
import random

import pytest

from autolabel.dataset import ClassTable, ImageRecord, Instance
from autolabel.geometry import BoundingBox, Detection, iou


@pytest.fixture
def classes() -> ClassTable:
    return ClassTable(("broiler", "hen"))


def random_box(rng: random.Random, w: float = 100.0, h: float = 100.0) -> BoundingBox:
    x0 = rng.uniform(0, w - 2)
    y0 = rng.uniform(0, h - 2)
    return BoundingBox(
        x0, y0, x0 + rng.uniform(1, min(40.0, w - x0)), y0 + rng.uniform(1, min(40.0, h - y0))
    )


def random_detection(
    rng: random.Random, n_classes: int = 2, w: float = 100.0, h: float = 100.0
) -> Detection:
    return Detection(random_box(rng, w, h), rng.randrange(n_classes), rng.random())


def random_record(
    rng: random.Random,
    image_id: str,
    n_instances: int,
    n_classes: int = 2,
    w: int = 640,
    h: int = 480,
    labeled: bool = True,
) -> ImageRecord:
    instances = tuple(
        Instance(random_box(rng, w, h), rng.randrange(n_classes))
        for _ in range(n_instances)
    )
    if not labeled:
        instances = ()
    return ImageRecord(
        image_id=image_id, width=w, height=h, instances=instances, labeled=labeled
    )


def non_overlapping_record(
    rng: random.Random,
    image_id: str,
    n_instances: int,
    n_classes: int = 2,
    w: int = 640,
    h: int = 480,
) -> ImageRecord:
    """Record whose instances are disjoint (one box per grid cell).

    Use when the scenario requires ground truth to survive duplicate
    suppression unchanged.
    """
    cols = max(1, math.ceil(math.sqrt(n_instances * w / h)))
    rows = max(1, math.ceil(n_instances / cols))
    cell_w, cell_h = w / cols, h / rows
    instances = []
    for k in range(n_instances):
        cx = (k % cols) * cell_w
        cy = (k // cols) * cell_h
        x0 = cx + rng.uniform(0.05, 0.35) * cell_w
        y0 = cy + rng.uniform(0.05, 0.35) * cell_h
        x1 = cx + rng.uniform(0.6, 0.95) * cell_w
        y1 = cy + rng.uniform(0.6, 0.95) * cell_h
        instances.append(Instance(BoundingBox(x0, y0, x1, y1), rng.randrange(n_classes)))
    return ImageRecord(image_id=image_id, width=w, height=h, instances=tuple(instances))


def brute_force_nms(detections: list[Detection], threshold: float) -> list[Detection]:
    """Reference suppressor: plain quadratic scan in confidence order."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[int] = []
    for i in order:
        suppressed = False
        for j in kept:
            if detections[j].class_id == detections[i].class_id:
                if iou(detections[j].box, detections[i].box) > threshold:
                    suppressed = True
                    break
        if not suppressed:
            kept.append(i)
    return [detections[i] for i in kept]
