"""Detector backends behind one protocol.

Real detectors stay out of process: they are either a subprocess honoring
the manifest-in/detections-out contract or a pre-computed detection
interchange file. The simulated backend perturbs known ground truth with a
configurable noise model and is the oracle for desk-scale verification.
"""

from __future__ import annotations

import hashlib
import logging
import subprocess
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from autolabel.dataset import ClassTable, ImageRecord, write_manifest_text
from autolabel.errors import BackendError, FormatError, ValidationError
from autolabel.geometry import BoundingBox, Detection, clamp_box

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("external_process", "detection_file", "simulated")


@dataclass(frozen=True)
class NoiseModel:
    """Error characteristics of the simulated detector.

    dropout_rate: probability a true instance is missed.
    spurious_rate: expected false boxes per image (Poisson).
    jitter_sigma: std-dev in pixels of corner perturbation.
    confusion: per-class rows of mislabel probabilities (rows sum to 1);
        None means the identity (never mislabel).
    conf_hi / conf_lo: Beta(alpha, beta) parameters for the confidence of
        correct-class kept boxes and of confused/spurious boxes.
    accuracy_curve: optional map from training-set size to overrides of
        dropout_rate / jitter_sigma; dropout must be non-increasing in size.
    spurious_size_pool: optional (w, h) pairs to draw spurious box sizes
        from, typically the training split's ground-truth size distribution.

    A model with zero dropout, zero spurious rate, zero jitter, and no
    confusion is the noiseless oracle: it reproduces ground truth exactly
    with confidence 1.0 instead of sampling the confidence distribution.
    """

    dropout_rate: float = 0.0
    spurious_rate: float = 0.0
    jitter_sigma: float = 0.0
    confusion: tuple[tuple[float, ...], ...] | None = None
    conf_hi: tuple[float, float] = (8.0, 2.0)
    conf_lo: tuple[float, float] = (2.0, 5.0)
    accuracy_curve: dict[int, dict[str, float]] | None = None
    spurious_size_pool: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValidationError(f"dropout_rate must lie in [0, 1], got {self.dropout_rate}")
        if self.spurious_rate < 0:
            raise ValidationError(f"spurious_rate must be >= 0, got {self.spurious_rate}")
        if self.jitter_sigma < 0:
            raise ValidationError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")
        if self.confusion is not None:
            for row in self.confusion:
                if any(p < 0 for p in row) or abs(sum(row) - 1.0) > 1e-9:
                    raise ValidationError(f"confusion row must be a distribution: {row}")
        if self.accuracy_curve:
            sizes = sorted(self.accuracy_curve)
            dropouts = [
                self.accuracy_curve[s].get("dropout_rate", self.dropout_rate) for s in sizes
            ]
            if any(b > a + 1e-12 for a, b in zip(dropouts, dropouts[1:])):
                raise ValidationError(
                    "accuracy_curve dropout_rate must be non-increasing with size"
                )

    @property
    def noiseless(self) -> bool:
        return (
            self.dropout_rate == 0.0
            and self.spurious_rate == 0.0
            and self.jitter_sigma == 0.0
            and self.confusion is None
        )

    def at_train_size(self, train_size: int | None) -> "NoiseModel":
        """Resolve accuracy-curve overrides for the given training-set size."""
        if train_size is None or not self.accuracy_curve:
            return self
        eligible = [s for s in self.accuracy_curve if s <= train_size]
        if not eligible:
            return self
        overrides = self.accuracy_curve[max(eligible)]
        return replace(
            self,
            dropout_rate=overrides.get("dropout_rate", self.dropout_rate),
            jitter_sigma=overrides.get("jitter_sigma", self.jitter_sigma),
        )


@dataclass(frozen=True)
class BackendDescriptor:
    """Uniform handle for a detector.

    kind-specific config keys:
      simulated        -> noise: NoiseModel, seed: int,
                          truth: {image_id: [instances]} | None (defaults to
                          each record's own instances)
      detection_file   -> path: str
      external_process -> command: [argv...] (manifest path and output path
                          are appended)
    """

    name: str
    kind: str
    class_table: ClassTable
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        required = {
            "simulated": ("noise",),
            "detection_file": ("path",),
            "external_process": ("command",),
        }[self.kind]
        missing = [k for k in required if k not in self.config]
        if missing:
            raise ValidationError(f"backend {self.name!r} missing config keys {missing}")


def _image_rng(master_seed: int, image_id: str) -> np.random.Generator:
    # Per-image streams split from the master seed; stable across platforms
    # and independent of processing order.
    digest = hashlib.sha256(f"{master_seed}:{image_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def simulate(
    record: ImageRecord,
    noise: NoiseModel,
    seed: int,
    n_classes: int,
    truth: list | None = None,
) -> list[Detection]:
    """Perturb a record's ground truth per the noise model.

    Each true instance is dropped with dropout_rate, else jittered, possibly
    mislabeled per the confusion row, and scored from the high or low
    confidence distribution depending on label correctness. Spurious boxes
    are added at a Poisson rate, placed uniformly.
    """
    instances = list(record.instances) if truth is None else list(truth)
    rng = _image_rng(seed, record.image_id)
    if noise.noiseless:
        return [Detection(i.box, i.class_id, 1.0) for i in instances]

    w, h = float(record.width), float(record.height)
    detections: list[Detection] = []
    for inst in instances:
        if rng.random() < noise.dropout_rate:
            continue
        box = inst.box
        if noise.jitter_sigma > 0:
            dx0, dy0, dx1, dy1 = rng.normal(0.0, noise.jitter_sigma, 4)
            box = clamp_box(
                box.x_min + dx0, box.y_min + dy0, box.x_max + dx1, box.y_max + dy1, w, h
            )
        class_id = inst.class_id
        if noise.confusion is not None:
            row = noise.confusion[inst.class_id]
            class_id = int(rng.choice(len(row), p=row))
        correct = class_id == inst.class_id
        a, b = noise.conf_hi if correct else noise.conf_lo
        confidence = float(rng.beta(a, b))
        detections.append(Detection(box, class_id, confidence))

    n_spurious = int(rng.poisson(noise.spurious_rate))
    size_pool = noise.spurious_size_pool or tuple(
        (i.box.width, i.box.height) for i in instances
    )
    for _ in range(n_spurious):
        if size_pool:
            bw, bh = size_pool[int(rng.integers(len(size_pool)))]
        else:
            bw, bh = w / 8, h / 8
        bw, bh = min(bw, w), min(bh, h)
        x0 = float(rng.uniform(0, w - bw)) if w > bw else 0.0
        y0 = float(rng.uniform(0, h - bh)) if h > bh else 0.0
        box = clamp_box(x0, y0, x0 + bw, y0 + bh, w, h)
        class_id = int(rng.integers(n_classes))
        a, b = noise.conf_lo
        confidence = float(rng.beta(a, b))
        detections.append(Detection(box, class_id, confidence))
    return detections


# ---------------------------------------------------------------------------
# Detection interchange file: one detection per line,
#   image_id <TAB> class_name <TAB> xmin <TAB> ymin <TAB> xmax <TAB> ymax <TAB> confidence


def parse_detection_file(text: str, classes: ClassTable) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 7:
            raise FormatError(f"expected 7 tab-separated fields, got {len(parts)}", lineno)
        image_id, class_name = parts[0], parts[1]
        if not image_id:
            raise FormatError("empty image_id", lineno)
        if class_name not in classes:
            raise FormatError(f"unknown class name {class_name!r}", lineno)
        try:
            x_min, y_min, x_max, y_max, confidence = (float(p) for p in parts[2:])
        except ValueError as exc:
            raise FormatError(f"unparsable number: {exc}", lineno) from None
        try:
            detection = Detection(
                BoundingBox(x_min, y_min, x_max, y_max), classes.index(class_name), confidence
            )
        except ValidationError as exc:
            raise FormatError(str(exc), lineno) from None
        out.setdefault(image_id, []).append(detection)
    return out


def emit_detection_file(
    detections_by_image: dict[str, list[Detection]], classes: ClassTable
) -> str:
    lines = []
    for image_id in sorted(detections_by_image):
        for det in detections_by_image[image_id]:
            b = det.box
            lines.append(
                f"{image_id}\t{classes.name(det.class_id)}\t{b.x_min!r}\t{b.y_min!r}"
                f"\t{b.x_max!r}\t{b.y_max!r}\t{det.confidence:.6f}"
            )
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# The detect protocol


def _validate_and_clamp(
    detections: list[Detection], record: ImageRecord
) -> list[Detection]:
    out = []
    for det in detections:
        b = det.box
        if b.x_min < 0 or b.y_min < 0 or b.x_max > record.width or b.y_max > record.height:
            b = clamp_box(
                b.x_min, b.y_min, b.x_max, b.y_max, float(record.width), float(record.height)
            )
        out.append(Detection(b, det.class_id, det.confidence))
    return out


def detect(
    backend: BackendDescriptor,
    images: list[ImageRecord],
    train_size: int | None = None,
) -> dict[str, list[Detection]]:
    """Run the backend over the images; image_id -> detections.

    Simulated backends are deterministic given their seed; per-image RNG
    streams make the result independent of image order and safe to fan out.
    """
    if backend.kind == "simulated":
        noise: NoiseModel = backend.config["noise"]
        noise = noise.at_train_size(train_size)
        seed = int(backend.config.get("seed", 0))
        truth = backend.config.get("truth")
        results = {}
        for record in images:
            # The truth map supplies hidden ground truth for unlabeled images;
            # labeled records carry their own.
            per_image_truth = truth.get(record.image_id) if truth is not None else None
            if truth is not None and per_image_truth is None:
                per_image_truth = None if record.labeled else []
            dets = simulate(
                record, noise, seed, len(backend.class_table), truth=per_image_truth
            )
            results[record.image_id] = _validate_and_clamp(dets, record)
        return results

    if backend.kind == "detection_file":
        path = Path(backend.config["path"])
        parsed = parse_detection_file(path.read_text(encoding="utf-8"), backend.class_table)
        results = {}
        for record in images:
            if record.image_id not in parsed:
                logger.warning(
                    "backend %s: no detections for image %s", backend.name, record.image_id
                )
            results[record.image_id] = _validate_and_clamp(
                parsed.get(record.image_id, []), record
            )
        return results

    # external_process
    command = list(backend.config["command"])
    with tempfile.TemporaryDirectory(prefix="autolabel-detect-") as tmp:
        manifest_path = Path(tmp) / "manifest.tsv"
        output_path = Path(tmp) / "detections.tsv"
        assignment = {r.image_id: "unlabeled" for r in images}
        manifest_path.write_text(write_manifest_text(images, assignment), encoding="utf-8")
        proc = subprocess.run(
            command + [str(manifest_path), str(output_path)],
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            raise BackendError(
                f"backend {backend.name!r} exited {proc.returncode}: {proc.stderr.strip()[-500:]}"
            )
        if not output_path.exists():
            raise BackendError(f"backend {backend.name!r} produced no output file")
        parsed = parse_detection_file(
            output_path.read_text(encoding="utf-8"), backend.class_table
        )
    results = {}
    for record in images:
        if record.image_id not in parsed:
            logger.warning(
                "backend %s: no detections for image %s", backend.name, record.image_id
            )
        results[record.image_id] = _validate_and_clamp(parsed.get(record.image_id, []), record)
    return results
