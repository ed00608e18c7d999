"""Bounding-box arithmetic: IoU, non-maximum suppression, geometric transforms.

Boxes use the corner (min/max) representation in continuous pixel
coordinates. Center/size forms exist only at format boundaries
(see :mod:`autolabel.dataset`). All functions are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from autolabel.errors import ValidationError

TRANSFORM_KINDS = ("rotate90", "rotate180", "rotate270", "flip_h", "flip_v", "scale")

MIN_BOX_AREA = 1e-6


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box; zero-area and non-finite boxes are rejected at construction."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        # plain floats only: numpy scalars would survive into serialization
        for name in ("x_min", "y_min", "x_max", "y_max"):
            object.__setattr__(self, name, float(getattr(self, name)))
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"non-finite box coordinates: {coords}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValidationError(f"degenerate box (min must be < max): {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class Detection:
    """One detected object: a box, a class index, and a confidence score in [0, 1]."""

    box: BoundingBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValidationError(f"class_id must be a nonnegative integer, got {self.class_id!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must lie in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class GeomTransform:
    """A geometric image transform; rotations are restricted to 90-degree multiples."""

    kind: str
    scale_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValidationError(f"unknown transform kind {self.kind!r}")
        if self.kind == "scale" and not (self.scale_factor > 0):
            raise ValidationError(f"scale_factor must be positive, got {self.scale_factor!r}")

    @property
    def name(self) -> str:
        """Stable name used to derive augmented image ids."""
        if self.kind == "scale":
            return f"scale{self.scale_factor:g}"
        return self.kind


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area of two boxes; 0 when disjoint."""
    ix_min = max(a.x_min, b.x_min)
    iy_min = max(a.y_min, b.y_min)
    ix_max = min(a.x_max, b.x_max)
    iy_max = min(a.y_max, b.y_max)
    iw = ix_max - ix_min
    ih = iy_max - iy_min
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def nms_survivor_indices(detections: list[Detection], iou_threshold: float) -> list[int]:
    """Indices of detections kept by per-class greedy suppression.

    Detections are visited in descending confidence (ties keep the lower
    input index); one is kept iff its IoU with every already-kept detection
    of the same class is <= iou_threshold. Returned indices are in visit
    order, i.e. descending confidence.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold must lie in [0, 1], got {iou_threshold!r}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[int] = []
    kept_by_class: dict[int, list[BoundingBox]] = {}
    for i in order:
        det = detections[i]
        rivals = kept_by_class.get(det.class_id, [])
        if all(iou(det.box, other) <= iou_threshold for other in rivals):
            kept.append(i)
            kept_by_class.setdefault(det.class_id, []).append(det.box)
    return kept


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Non-maximum suppression, per class; output ordered by descending confidence."""
    return [detections[i] for i in nms_survivor_indices(detections, iou_threshold)]


def transformed_size(t: GeomTransform, image_w: float, image_h: float) -> tuple[float, float]:
    """Dimensions of the image after applying the transform."""
    if t.kind in ("rotate90", "rotate270"):
        return (image_h, image_w)
    if t.kind == "scale":
        return (image_w * t.scale_factor, image_h * t.scale_factor)
    return (image_w, image_h)


def _map_point(t: GeomTransform, x: float, y: float, w: float, h: float) -> tuple[float, float]:
    # rotate90 is clockwise; rotate270 is its inverse.
    if t.kind == "flip_h":
        return (w - x, y)
    if t.kind == "flip_v":
        return (x, h - y)
    if t.kind == "rotate90":
        return (h - y, x)
    if t.kind == "rotate180":
        return (w - x, h - y)
    if t.kind == "rotate270":
        return (y, w - x)
    if t.kind == "scale":
        return (x * t.scale_factor, y * t.scale_factor)
    raise ValidationError(f"unknown transform kind {t.kind!r}")


def apply_transform(
    t: GeomTransform, box: BoundingBox, image_w: float, image_h: float
) -> BoundingBox:
    """Axis-aligned image of ``box`` under ``t``, in the transformed frame.

    The result is re-normalized so min < max and clamped to the transformed
    image bounds. A scale that would shrink the box below MIN_BOX_AREA is
    rejected.
    """
    if t.kind == "scale" and box.area * t.scale_factor**2 < MIN_BOX_AREA:
        raise ValidationError(
            f"scale_factor {t.scale_factor} collapses box area below {MIN_BOX_AREA}"
        )
    corners = [
        _map_point(t, box.x_min, box.y_min, image_w, image_h),
        _map_point(t, box.x_max, box.y_min, image_w, image_h),
        _map_point(t, box.x_min, box.y_max, image_w, image_h),
        _map_point(t, box.x_max, box.y_max, image_w, image_h),
    ]
    xs = [c[0] for c in corners]
    ys = [c[1] for c in corners]
    new_w, new_h = transformed_size(t, image_w, image_h)
    x_min = min(max(min(xs), 0.0), new_w)
    x_max = max(min(max(xs), new_w), 0.0)
    y_min = min(max(min(ys), 0.0), new_h)
    y_max = max(min(max(ys), new_h), 0.0)
    return BoundingBox(x_min, y_min, x_max, y_max)


def clamp_box(
    x_min: float, y_min: float, x_max: float, y_max: float, image_w: float, image_h: float
) -> BoundingBox:
    """Clamp raw corners into the image, preserving min < max.

    Coordinates are sorted first, then clipped; a box collapsed by clipping
    is pushed back to a sliver of MIN_BOX_AREA extent inside the image.
    """
    x_min, x_max = sorted((x_min, x_max))
    y_min, y_max = sorted((y_min, y_max))
    x_min = min(max(x_min, 0.0), image_w)
    x_max = min(max(x_max, 0.0), image_w)
    y_min = min(max(y_min, 0.0), image_h)
    y_max = min(max(y_max, 0.0), image_h)
    eps = math.sqrt(MIN_BOX_AREA)
    if x_max - x_min < eps:
        x_min = max(0.0, min(x_min, image_w - eps))
        x_max = x_min + eps
    if y_max - y_min < eps:
        y_min = max(0.0, min(y_min, image_h - eps))
        y_max = y_min + eps
    return BoundingBox(x_min, y_min, x_max, y_max)
