"""Hybrid detection: embedding-based class assignment and backend merging.

Embeddings arrive from an external provider (same subprocess/file pattern
as detectors) or from the deterministic synthetic provider used in tests;
no encoder runs in-process.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from autolabel.dataset import ClassTable, ImageRecord
from autolabel.errors import FormatError, ValidationError
from autolabel.geometry import BoundingBox, Detection, iou, nms_survivor_indices

EMBEDDING_SOURCES = ("image_region", "text_prompt")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    source: str = "image_region"

    def __post_init__(self):
        if not self.values:
            raise ValidationError("embedding must have at least one dimension")
        if any(not math.isfinite(v) for v in self.values):
            raise ValidationError("embedding entries must be finite")
        if all(v == 0.0 for v in self.values):
            raise ValidationError("embedding must not be the zero vector")
        if self.source not in EMBEDDING_SOURCES:
            raise ValidationError(f"unknown embedding source {self.source!r}")

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PromptSet:
    """Text prompts per class; every class needs at least one prompt."""

    prompts: tuple[tuple[int, str], ...]

    def for_table(self, classes: ClassTable) -> None:
        covered = {class_id for class_id, _ in self.prompts}
        missing = [name for i, name in enumerate(classes.names) if i not in covered]
        if missing:
            raise ValidationError(f"classes without prompts: {missing}")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise ValidationError(f"dimensionality mismatch: {a.dim} vs {b.dim}")
    va = np.asarray(a.values, dtype=float)
    vb = np.asarray(b.values, dtype=float)
    return float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))


@dataclass(frozen=True)
class ClassAssignment:
    detection: Detection
    similarity: float


def assign_classes(
    detections: list[Detection],
    region_embeddings: dict[int, EmbeddingVector],
    prompts: PromptSet,
    prompt_embeddings: dict[str, EmbeddingVector],
) -> list[ClassAssignment]:
    """Reassign each detection's class to its most similar prompt's class.

    ``region_embeddings`` is keyed by detection index. Per class the best of
    that class's prompts counts; exact similarity ties go to the lower
    class_id. The detector confidence is kept untouched; the winning
    similarity rides along as metadata.
    """
    for prompt_class, text in prompts.prompts:
        if text not in prompt_embeddings:
            raise ValidationError(f"prompt {text!r} has no embedding")
    out = []
    for index, det in enumerate(detections):
        region = region_embeddings.get(index)
        if region is None:
            raise ValidationError(f"detection {index} has no region embedding")
        best_class, best_sim = None, -math.inf
        for prompt_class, text in prompts.prompts:
            sim = cosine_similarity(region, prompt_embeddings[text])
            if sim > best_sim or (sim == best_sim and prompt_class < best_class):
                best_class, best_sim = prompt_class, sim
        out.append(ClassAssignment(replace(det, class_id=best_class), best_sim))
    return out


@dataclass(frozen=True)
class SourcedDetection:
    detection: Detection
    origin: str  # which backend produced the surviving box


def merge_backends(
    primary: list[Detection],
    secondary: list[Detection],
    iou_threshold: float,
    primary_name: str = "primary",
    secondary_name: str = "secondary",
) -> list[SourcedDetection]:
    """Union both detection sets, then class-aware suppression.

    Primary detections precede secondary in the stable suppression order,
    so at equal confidence the primary backend's box survives.
    """
    combined = list(primary) + list(secondary)
    origins = [primary_name] * len(primary) + [secondary_name] * len(secondary)
    survivors = nms_survivor_indices(combined, iou_threshold)
    return [SourcedDetection(combined[i], origins[i]) for i in survivors]


# ---------------------------------------------------------------------------
# Embedding interchange file: header `dim=<d>`, then `key<TAB>v1,v2,...,vd`.


def parse_embedding_file(text: str) -> dict[str, EmbeddingVector]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise FormatError("missing dim=<d> header", 1)
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise FormatError(f"unparsable dimension {lines[0]!r}", 1) from None
    if dim <= 0:
        raise FormatError(f"dimension must be positive, got {dim}", 1)
    out: dict[str, EmbeddingVector] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"expected key<TAB>values, got {len(parts)} fields", lineno)
        key, values_text = parts
        try:
            values = tuple(float(v) for v in values_text.split(","))
        except ValueError as exc:
            raise FormatError(f"unparsable vector entry: {exc}", lineno) from None
        if len(values) != dim:
            raise FormatError(f"expected {dim} entries, got {len(values)}", lineno)
        try:
            out[key] = EmbeddingVector(values)
        except ValidationError as exc:
            raise FormatError(str(exc), lineno) from None
    return out


def emit_embedding_file(embeddings: dict[str, EmbeddingVector]) -> str:
    if not embeddings:
        raise ValidationError("nothing to emit")
    dims = {e.dim for e in embeddings.values()}
    if len(dims) != 1:
        raise ValidationError(f"mixed dimensionalities: {sorted(dims)}")
    lines = [f"dim={dims.pop()}"]
    for key in sorted(embeddings):
        values = ",".join(repr(v) for v in embeddings[key].values)
        lines.append(f"{key}\t{values}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Synthetic provider for desk-scale runs: embeds a region as (a noisy copy
# of) the one-hot vector of the ground-truth class it overlaps most.


class SyntheticEmbeddingProvider:
    """Deterministic region/prompt embeddings derived from known ground truth."""

    def __init__(self, classes: ClassTable, noise: float = 0.0, seed: int = 0):
        if not 0.0 <= noise < 1.0:
            raise ValidationError(f"noise must lie in [0, 1), got {noise}")
        self.classes = classes
        self.noise = noise
        self.seed = seed

    def prompt_embedding(self, class_id: int) -> EmbeddingVector:
        values = [0.0] * len(self.classes)
        values[class_id] = 1.0
        return EmbeddingVector(tuple(values), source="text_prompt")

    def region_embedding(self, record: ImageRecord, box: BoundingBox) -> EmbeddingVector:
        best_class, best_iou = 0, 0.0
        for inst in record.instances:
            overlap = iou(box, inst.box)
            if overlap > best_iou:
                best_class, best_iou = inst.class_id, overlap
        values = [0.0] * len(self.classes)
        values[best_class] = 1.0
        if self.noise > 0:
            digest = hashlib.sha256(
                f"{self.seed}:{record.image_id}:{box.as_tuple()}".encode()
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            jitter = rng.uniform(-self.noise, self.noise, len(values))
            values = [max(1e-9, v + j) for v, j in zip(values, jitter)]
        return EmbeddingVector(tuple(values), source="image_region")
