"""Dataset model: class table, records, splits, label formats, and the store.

Internal coordinates are 0-based continuous pixels; YOLO (normalized
center/size text) and Pascal VOC (1-based integer corners) conventions are
converted at the format boundary only.
"""

from __future__ import annotations

import json
import math
import random
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.etree import ElementTree

from autolabel.errors import FormatError, ValidationError
from autolabel.geometry import BoundingBox, GeomTransform, apply_transform, transformed_size

PROVENANCES = ("human", "pseudo", "corrected")
SPLIT_NAMES = ("train", "val", "test", "unlabeled")

MANIFEST_HEADER = "# autolabel-manifest v1"
DATASET_HEADER = "# autolabel-dataset v1"


@dataclass(frozen=True)
class ClassTable:
    """Ordered class names; indices are contiguous from 0."""

    names: tuple[str, ...]

    def __post_init__(self):
        if not self.names:
            raise ValidationError("class table must not be empty")
        if any(not n for n in self.names):
            raise ValidationError("class names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate class names: {self.names}")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class name {name!r}") from None

    def name(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise ValidationError(f"class id {class_id} outside table of {len(self.names)}")
        return self.names[class_id]


@dataclass(frozen=True)
class Instance:
    """One annotated object with its provenance.

    difficult/truncated are carried through VOC round trips untouched; the
    pipeline itself ignores them.
    """

    box: BoundingBox
    class_id: int
    provenance: str = "human"
    source_iteration: int = 0
    difficult: int = 0
    truncated: int = 0

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "human" and self.source_iteration != 0:
            raise ValidationError("human instances must have source_iteration 0")
        if self.provenance in ("pseudo", "corrected") and self.source_iteration < 1:
            raise ValidationError(
                f"{self.provenance} instances must have source_iteration >= 1"
            )
        if self.class_id < 0:
            raise ValidationError(f"class_id must be nonnegative, got {self.class_id}")


@dataclass(frozen=True)
class ImageRecord:
    """An image's identity, dimensions, and annotation instances.

    Pixel data is referenced by path only and never decoded here.
    """

    image_id: str
    width: int
    height: int
    instances: tuple[Instance, ...] = ()
    labeled: bool = True
    path: str = ""

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("image_id must be non-empty")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"image dimensions must be positive, got {self.width}x{self.height}")
        for inst in self.instances:
            b = inst.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValidationError(
                    f"instance box {b.as_tuple()} outside image {self.image_id} "
                    f"({self.width}x{self.height})"
                )
        if not self.labeled and any(i.provenance != "pseudo" for i in self.instances):
            raise ValidationError(
                f"unlabeled image {self.image_id} may only carry pseudo instances"
            )


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test/unlabeled partitions of image ids."""

    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]
    unlabeled: frozenset[str]
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        sets = [self.train, self.val, self.test, self.unlabeled]
        total = sum(len(s) for s in sets)
        union = self.train | self.val | self.test | self.unlabeled
        if len(union) != total:
            raise ValidationError("split subsets must be pairwise disjoint")

    def of(self, name: str) -> frozenset[str]:
        if name not in SPLIT_NAMES:
            raise ValidationError(f"unknown split {name!r}")
        return getattr(self, name)

    def assignment(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for name in SPLIT_NAMES:
            for image_id in self.of(name):
                out[image_id] = name
        return out


def split(
    images: list[ImageRecord], ratios: tuple[float, float, float], seed: int
) -> DatasetSplit:
    """Partition labeled images into train/val/test; unlabeled images form the pool.

    Subset sizes are floor(n * ratio) for each of the three ratios, with the
    remainder assigned to train. Deterministic for a fixed seed.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValidationError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    labeled_ids = sorted(r.image_id for r in images if r.labeled)
    unlabeled_ids = frozenset(r.image_id for r in images if not r.labeled)
    n = len(labeled_ids)
    if n < 3:
        raise ValidationError(f"need at least 3 labeled images to split, got {n}")
    # 1e-9 nudge guards against 0.6 * 200 = 119.999... style float error
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_val = math.floor(n * ratios[1] + 1e-9)
    n_test = math.floor(n * ratios[2] + 1e-9)
    n_train += n - (n_train + n_val + n_test)
    rng = random.Random(seed)
    rng.shuffle(labeled_ids)
    return DatasetSplit(
        train=frozenset(labeled_ids[:n_train]),
        val=frozenset(labeled_ids[n_train : n_train + n_val]),
        test=frozenset(labeled_ids[n_train + n_val :]),
        unlabeled=unlabeled_ids,
        ratios=tuple(ratios),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# YOLO text format: one line per instance, `class x_center y_center w h`,
# all but the class normalized to [0, 1], six decimals on export.


def import_yolo(
    annotation_text: str, image_w: float, image_h: float, classes: ClassTable
) -> list[Instance]:
    instances: list[Instance] = []
    for lineno, raw in enumerate(annotation_text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"expected 5 fields, got {len(parts)}: {line!r}", lineno)
        try:
            class_id = int(parts[0])
            xc, yc, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise FormatError(f"unparsable field: {exc}", lineno) from None
        if not 0 <= class_id < len(classes):
            raise FormatError(f"class index {class_id} outside table of {len(classes)}", lineno)
        for value in (xc, yc, w, h):
            if not 0.0 <= value <= 1.0:
                raise FormatError(f"coordinate {value} outside [0, 1]", lineno)
        x_min = max((xc - w / 2) * image_w, 0.0)
        y_min = max((yc - h / 2) * image_h, 0.0)
        x_max = min((xc + w / 2) * image_w, image_w)
        y_max = min((yc + h / 2) * image_h, image_h)
        if x_max - x_min <= 0 or y_max - y_min <= 0:
            raise FormatError(f"zero-area box after conversion: {line!r}", lineno)
        instances.append(Instance(BoundingBox(x_min, y_min, x_max, y_max), class_id))
    return instances


def export_yolo(
    instances: list[Instance], image_w: float, image_h: float, classes: ClassTable
) -> str:
    lines = []
    for inst in instances:
        if not 0 <= inst.class_id < len(classes):
            raise ValidationError(f"class id {inst.class_id} outside table of {len(classes)}")
        b = inst.box
        xc = (b.x_min + b.x_max) / 2 / image_w
        yc = (b.y_min + b.y_max) / 2 / image_h
        w = b.width / image_w
        h = b.height / image_h
        lines.append(f"{inst.class_id} {xc:.6f} {yc:.6f} {w:.6f} {h:.6f}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Pascal VOC XML: 1-based integer pixel corners. Internally 0-based, so
# xmin/ymin shift by one on the way in and out; xmax/ymax map directly.


def import_voc(xml_text: str) -> tuple[str, int, int, list[tuple[str, Instance]]]:
    """Parse a VOC annotation; returns (image_id, width, height, [(class_name, instance)]).

    Class names are returned verbatim so the caller can resolve them against
    its own table.
    """
    try:
        root = ElementTree.fromstring(xml_text)
    except ElementTree.ParseError as exc:
        raise FormatError(f"invalid XML: {exc}") from None
    filename = root.findtext("filename") or ""
    size = root.find("size")
    if size is None:
        raise FormatError("missing <size> element")
    try:
        width = int(size.findtext("width") or "")
        height = int(size.findtext("height") or "")
    except ValueError:
        raise FormatError("non-integer width/height in <size>") from None
    out: list[tuple[str, Instance]] = []
    for obj in root.iter("object"):
        name = obj.findtext("name")
        if not name:
            raise FormatError("object without <name>")
        bndbox = obj.find("bndbox")
        if bndbox is None:
            raise FormatError(f"object {name!r} without <bndbox>")
        try:
            xmin = int(bndbox.findtext("xmin") or "")
            ymin = int(bndbox.findtext("ymin") or "")
            xmax = int(bndbox.findtext("xmax") or "")
            ymax = int(bndbox.findtext("ymax") or "")
        except ValueError:
            raise FormatError(f"non-integer corner in object {name!r}") from None
        if xmin >= xmax or ymin >= ymax:
            raise FormatError(f"empty bndbox ({xmin}, {ymin}, {xmax}, {ymax}) in object {name!r}")
        difficult = int(obj.findtext("difficult") or "0")
        truncated = int(obj.findtext("truncated") or "0")
        inst = Instance(
            BoundingBox(float(xmin - 1), float(ymin - 1), float(xmax), float(ymax)),
            class_id=0,
            difficult=difficult,
            truncated=truncated,
        )
        out.append((name, inst))
    return filename, width, height, out


def resolve_voc_classes(
    parsed: list[tuple[str, Instance]], classes: ClassTable
) -> list[Instance]:
    return [replace(inst, class_id=classes.index(name)) for name, inst in parsed]


def _voc_corner_pair(lo: float, hi: float, limit: int) -> tuple[int, int]:
    """Map a continuous extent to 1-based integer corners, never collapsing.

    Extents narrower than the integer grid widen to the smallest pair the
    import rule (min strictly below max) accepts, shifted inside the image
    if needed.
    """
    lo_v = min(round(lo) + 1, limit)
    hi_v = round(hi)
    if hi_v < lo_v + 1:
        hi_v = lo_v + 1
        if hi_v > limit:
            hi_v = limit
            lo_v = max(limit - 1, 1)
    return lo_v, hi_v


def export_voc(
    image_id: str,
    width: int,
    height: int,
    instances: list[Instance],
    classes: ClassTable,
) -> str:
    """Canonical VOC XML; export(import(x)) is byte-identical for canonical files."""
    lines = [
        "<annotation>",
        f"  <filename>{image_id}</filename>",
        "  <size>",
        f"    <width>{width}</width>",
        f"    <height>{height}</height>",
        "    <depth>3</depth>",
        "  </size>",
    ]
    for inst in instances:
        b = inst.box
        xmin, xmax = _voc_corner_pair(b.x_min, b.x_max, width)
        ymin, ymax = _voc_corner_pair(b.y_min, b.y_max, height)
        lines += [
            "  <object>",
            f"    <name>{classes.name(inst.class_id)}</name>",
            f"    <truncated>{inst.truncated}</truncated>",
            f"    <difficult>{inst.difficult}</difficult>",
            "    <bndbox>",
            f"      <xmin>{xmin}</xmin>",
            f"      <ymin>{ymin}</ymin>",
            f"      <xmax>{xmax}</xmax>",
            f"      <ymax>{ymax}</ymax>",
            "    </bndbox>",
            "  </object>",
        ]
    lines.append("</annotation>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Augmentation


def augment(record: ImageRecord, transforms: list[GeomTransform]) -> list[ImageRecord]:
    """One new record per transform; instance count and provenance preserved."""
    if not record.labeled:
        raise ValidationError(f"cannot augment unlabeled image {record.image_id}")
    out = []
    for t in transforms:
        new_w, new_h = transformed_size(t, record.width, record.height)
        new_instances = tuple(
            replace(inst, box=apply_transform(t, inst.box, record.width, record.height))
            for inst in record.instances
        )
        out.append(
            ImageRecord(
                image_id=f"{record.image_id}__{t.name}",
                width=int(round(new_w)),
                height=int(round(new_h)),
                instances=new_instances,
                labeled=True,
                path=record.path,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Manifest: the line-delimited interchange file handed to external tools.
# Header line, then one tab-separated record per image:
#   image_id <TAB> path <TAB> width <TAB> height <TAB> split <TAB> labeled


def write_manifest_text(records: list[ImageRecord], assignment: dict[str, str]) -> str:
    lines = [MANIFEST_HEADER]
    for rec in sorted(records, key=lambda r: r.image_id):
        split_name = assignment.get(rec.image_id, "unlabeled")
        labeled = "1" if rec.labeled else "0"
        lines.append(
            f"{rec.image_id}\t{rec.path}\t{rec.width}\t{rec.height}\t{split_name}\t{labeled}"
        )
    return "\n".join(lines) + "\n"


def read_manifest_text(text: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(f"missing manifest header {MANIFEST_HEADER!r}", 1)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise FormatError(f"expected 6 fields, got {len(parts)}", lineno)
        image_id, path, width, height, split_name, labeled = parts
        if split_name not in SPLIT_NAMES:
            raise FormatError(f"unknown split {split_name!r}", lineno)
        try:
            entry = {
                "image_id": image_id,
                "path": path,
                "width": int(width),
                "height": int(height),
                "split": split_name,
                "labeled": labeled == "1",
            }
        except ValueError as exc:
            raise FormatError(f"unparsable field: {exc}", lineno) from None
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# Store


def _instance_to_obj(inst: Instance) -> dict:
    return {
        "box": list(inst.box.as_tuple()),
        "class_id": inst.class_id,
        "provenance": inst.provenance,
        "source_iteration": inst.source_iteration,
        "difficult": inst.difficult,
        "truncated": inst.truncated,
    }


def _instance_from_obj(obj: dict) -> Instance:
    return Instance(
        box=BoundingBox(*obj["box"]),
        class_id=obj["class_id"],
        provenance=obj["provenance"],
        source_iteration=obj["source_iteration"],
        difficult=obj.get("difficult", 0),
        truncated=obj.get("truncated", 0),
    )


class DatasetStore:
    """All image records plus their split assignment, with serialized writes.

    Reads are lock-free on immutable records; every mutation goes through
    ``transaction()``, which snapshots the serialized state and restores it
    byte-for-byte if the transaction body raises. When ``path`` is set the
    committed state is persisted atomically (write temp file, rename).
    """

    def __init__(
        self,
        classes: ClassTable,
        records: list[ImageRecord] | None = None,
        split_assignment: dict[str, str] | None = None,
        path: str | Path | None = None,
    ):
        self.classes = classes
        self._records: dict[str, ImageRecord] = {}
        self._splits: dict[str, str] = {}
        self._lock = threading.RLock()
        self.path = Path(path) if path else None
        for rec in records or []:
            self.add_record(rec, (split_assignment or {}).get(rec.image_id))

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._records

    def get(self, image_id: str) -> ImageRecord:
        try:
            return self._records[image_id]
        except KeyError:
            raise ValidationError(f"unknown image {image_id!r}") from None

    def split_of(self, image_id: str) -> str:
        self.get(image_id)
        return self._splits[image_id]

    def images(self, split_name: str | None = None) -> list[ImageRecord]:
        if split_name is None:
            ids = sorted(self._records)
        else:
            if split_name not in SPLIT_NAMES:
                raise ValidationError(f"unknown split {split_name!r}")
            ids = sorted(i for i, s in self._splits.items() if s == split_name)
        return [self._records[i] for i in ids]

    def split_view(self) -> DatasetSplit:
        by_name = {name: set() for name in SPLIT_NAMES}
        for image_id, name in self._splits.items():
            by_name[name].add(image_id)
        return DatasetSplit(
            train=frozenset(by_name["train"]),
            val=frozenset(by_name["val"]),
            test=frozenset(by_name["test"]),
            unlabeled=frozenset(by_name["unlabeled"]),
        )

    def manifest_text(self, splits: tuple[str, ...] = SPLIT_NAMES) -> str:
        records = [r for r in self.images() if self._splits[r.image_id] in splits]
        return write_manifest_text(records, self._splits)

    # -- mutations ----------------------------------------------------------

    def add_record(self, record: ImageRecord, split_name: str | None = None) -> None:
        with self._lock:
            if record.image_id in self._records:
                raise ValidationError(f"duplicate image id {record.image_id!r}")
            if split_name is None:
                split_name = "train" if record.labeled else "unlabeled"
            if split_name not in SPLIT_NAMES:
                raise ValidationError(f"unknown split {split_name!r}")
            self._records[record.image_id] = record
            self._splits[record.image_id] = split_name

    def apply_split(self, ds_split: DatasetSplit) -> None:
        with self._lock:
            assignment = ds_split.assignment()
            missing = set(self._records) - set(assignment)
            if missing:
                raise ValidationError(f"split does not cover images: {sorted(missing)[:5]}")
            self._splits = {i: assignment[i] for i in self._records}

    def promote_pseudo(
        self, image_id: str, instances: list[Instance], iteration: int
    ) -> None:
        """Attach pseudo instances to an unlabeled image and move it to train."""
        with self._lock:
            rec = self.get(image_id)
            if self._splits[image_id] != "unlabeled":
                raise ValidationError(f"image {image_id!r} is not in the unlabeled pool")
            stamped = tuple(
                replace(i, provenance="pseudo", source_iteration=iteration) for i in instances
            )
            self._records[image_id] = replace(rec, instances=stamped, labeled=True)
            self._splits[image_id] = "train"

    def strip_to_unlabeled(self, image_id: str) -> tuple[Instance, ...]:
        """Remove an image's labels and return it to the pool.

        Returns the removed instances so callers can keep them as hidden
        ground truth (e.g. for a simulated backend).
        """
        with self._lock:
            rec = self.get(image_id)
            removed = rec.instances
            self._records[image_id] = replace(rec, instances=(), labeled=False)
            self._splits[image_id] = "unlabeled"
            return removed

    def apply_correction(
        self, image_id: str, instances: list[Instance], iteration: int
    ) -> None:
        """Replace an image's machine labels with human-corrected ones.

        Human seed labels are immutable: a record that already carries human
        instances is never rewritten here.
        """
        with self._lock:
            rec = self.get(image_id)
            if any(i.provenance == "human" for i in rec.instances):
                raise ValidationError(
                    f"image {image_id!r} carries human labels; corrections apply to machine labels only"
                )
            stamped = tuple(
                replace(i, provenance="corrected", source_iteration=iteration)
                for i in instances
            )
            self._records[image_id] = replace(rec, instances=stamped, labeled=True)
            if self._splits[image_id] == "unlabeled":
                self._splits[image_id] = "train"

    # -- persistence ----------------------------------------------------------

    def serialize(self) -> str:
        lines = [DATASET_HEADER, json.dumps({"classes": list(self.classes.names)})]
        for image_id in sorted(self._records):
            rec = self._records[image_id]
            obj = {
                "image_id": rec.image_id,
                "path": rec.path,
                "width": rec.width,
                "height": rec.height,
                "split": self._splits[image_id],
                "labeled": rec.labeled,
                "instances": [_instance_to_obj(i) for i in rec.instances],
            }
            lines.append(json.dumps(obj, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def deserialize(cls, text: str, path: str | Path | None = None) -> "DatasetStore":
        lines = text.splitlines()
        if not lines or lines[0] != DATASET_HEADER:
            raise FormatError(f"missing dataset header {DATASET_HEADER!r}", 1)
        if len(lines) < 2:
            raise FormatError("missing class table line", 2)
        classes = ClassTable(tuple(json.loads(lines[1])["classes"]))
        store = cls(classes, path=path)
        for lineno, line in enumerate(lines[2:], start=3):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc}", lineno) from None
            record = ImageRecord(
                image_id=obj["image_id"],
                width=obj["width"],
                height=obj["height"],
                instances=tuple(_instance_from_obj(o) for o in obj["instances"]),
                labeled=obj["labeled"],
                path=obj.get("path", ""),
            )
            store.add_record(record, obj["split"])
        return store

    def save(self, path: str | Path | None = None) -> None:
        target = Path(path) if path else self.path
        if target is None:
            return
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_text(self.serialize(), encoding="utf-8")
        tmp.replace(target)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetStore":
        return cls.deserialize(Path(path).read_text(encoding="utf-8"), path=path)

    @contextmanager
    def transaction(self):
        """Single-writer commit point; restores the snapshot on any error."""
        with self._lock:
            snapshot = self.serialize()
            try:
                yield self
            except BaseException:
                restored = DatasetStore.deserialize(snapshot)
                self._records = restored._records
                self._splits = restored._splits
                raise
            else:
                self.save()
