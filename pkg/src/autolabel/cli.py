"""Operator command line: every pipeline stage scriptable without the service.

Each command reads one config file plus flags (flags win), writes its
artifacts to a dedicated output directory, and echoes the merged
configuration there so a run can be reproduced from its output alone. Any
validation failure exits nonzero with a single machine-parsable
``error: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import functools
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from autolabel import active as active_mod
from autolabel import config as config_mod
from autolabel.backends import detect, emit_detection_file, parse_detection_file
from autolabel.dataset import (
    DatasetStore,
    ImageRecord,
    augment,
    export_voc,
    export_yolo,
    import_voc,
    import_yolo,
    resolve_voc_classes,
    split,
)
from autolabel.errors import AutolabelError, ConfigError
from autolabel.fusion import merge_backends
from autolabel.geometry import GeomTransform
from autolabel.metrics import evaluate
from autolabel.review import ReviewQueue
from autolabel.selfloop import run_loop


def fail(kind: str, message: str) -> None:
    click.echo(f"error: {kind}: {message}", err=True)
    sys.exit(2)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AutolabelError as exc:
            fail(type(exc).__name__, str(exc))
        except OSError as exc:
            fail("OSError", str(exc))

    return wrapper


def _echo_config(config: dict, out_dir: Path, extra: dict) -> None:
    merged = dict(config)
    merged.update(extra)
    config_mod.dump_effective_config(merged, out_dir / "effective_config.yaml")


@click.group()
def main():
    """Auto-labeling pipeline commands."""


config_option = click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    envvar=config_mod.CONFIG_ENV_VAR,
    help="YAML config file (or set " + config_mod.CONFIG_ENV_VAR + ").",
)
out_option = click.option(
    "--out", "out_dir", type=click.Path(file_okay=False), required=True
)
dataset_option = click.option(
    "--dataset", "dataset_path", type=click.Path(dir_okay=False), required=True
)


@main.command("import")
@config_option
@out_option
@click.option("--labels", "labels_dir", type=click.Path(file_okay=False), required=True)
@click.option("--format", "label_format", type=click.Choice(["yolo", "voc"]), required=True)
@click.option(
    "--dims",
    "dims_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="TSV image_id<TAB>width<TAB>height, required for YOLO trees.",
)
@click.option("--classes", "classes_csv", default=None, help="Comma-separated class names.")
@click.option("--images-root", default="", help="Prefix recorded as each image's pixel path.")
@guarded
def import_cmd(config_path, out_dir, labels_dir, label_format, dims_path, classes_csv, images_root):
    """Build a dataset store from a tree of YOLO text or VOC XML labels."""
    config = config_mod.load_config(config_path)
    if classes_csv:
        config["classes"] = [c.strip() for c in classes_csv.split(",")]
    classes = config_mod.build_class_table(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = DatasetStore(classes, path=out / "dataset.jsonl")

    labels = sorted(Path(labels_dir).glob("*.txt" if label_format == "yolo" else "*.xml"))
    if label_format == "yolo":
        if not dims_path:
            raise ConfigError("YOLO import needs --dims (labels carry no image size)")
        dims = {}
        for line in Path(dims_path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            image_id, w, h = line.split("\t")
            dims[image_id] = (int(w), int(h))
        for label_file in labels:
            image_id = label_file.stem
            if image_id not in dims:
                raise ConfigError(f"no dimensions for image {image_id!r} in {dims_path}")
            w, h = dims[image_id]
            instances = import_yolo(label_file.read_text(encoding="utf-8"), w, h, classes)
            store.add_record(
                ImageRecord(
                    image_id=image_id,
                    width=w,
                    height=h,
                    instances=tuple(instances),
                    labeled=True,
                    path=os.path.join(images_root, image_id) if images_root else "",
                )
            )
    else:
        for label_file in labels:
            image_id_raw, w, h, parsed = import_voc(label_file.read_text(encoding="utf-8"))
            image_id = image_id_raw or label_file.stem
            instances = resolve_voc_classes(parsed, classes)
            store.add_record(
                ImageRecord(
                    image_id=image_id,
                    width=w,
                    height=h,
                    instances=tuple(instances),
                    labeled=True,
                    path=os.path.join(images_root, image_id) if images_root else "",
                )
            )
    store.save()
    (out / "manifest.tsv").write_text(store.manifest_text(), encoding="utf-8")
    _echo_config(config, out, {"command": "import", "labels": str(labels_dir)})
    click.echo(f"imported {len(store)} images into {out / 'dataset.jsonl'}")


@main.command("split")
@config_option
@dataset_option
@out_option
@click.option("--ratios", default=None, help="train,val,test ratios, e.g. 0.6,0.2,0.2")
@click.option("--seed", type=int, default=None)
@guarded
def split_cmd(config_path, dataset_path, out_dir, ratios, seed):
    """Partition labeled images into train/val/test."""
    config = config_mod.load_config(config_path)
    ratio_values = (
        tuple(float(r) for r in ratios.split(","))
        if ratios
        else tuple((config.get("split") or {}).get("ratios", (0.6, 0.2, 0.2)))
    )
    seed_value = seed if seed is not None else int(config.get("seed", 0))
    store = DatasetStore.load(dataset_path)
    ds_split = split(store.images(), ratio_values, seed_value)
    store.apply_split(ds_split)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store.save(out / "dataset.jsonl")
    (out / "manifest.tsv").write_text(store.manifest_text(), encoding="utf-8")
    _echo_config(config, out, {"command": "split", "ratios": list(ratio_values), "seed": seed_value})
    click.echo(
        f"train={len(ds_split.train)} val={len(ds_split.val)}"
        f" test={len(ds_split.test)} unlabeled={len(ds_split.unlabeled)}"
    )


@main.command("augment")
@config_option
@dataset_option
@out_option
@click.option(
    "--transforms",
    "transforms_csv",
    required=True,
    help="Comma-separated: flip_h, flip_v, rotate90/180/270, scale:FACTOR",
)
@guarded
def augment_cmd(config_path, dataset_path, out_dir, transforms_csv):
    """Augment the training split; annotations follow the geometry."""
    config = config_mod.load_config(config_path)
    transforms = []
    for token in transforms_csv.split(","):
        token = token.strip()
        if token.startswith("scale:"):
            transforms.append(GeomTransform("scale", float(token.split(":", 1)[1])))
        else:
            transforms.append(GeomTransform(token))
    store = DatasetStore.load(dataset_path)
    new_records = []
    for record in store.images("train"):
        new_records.extend(augment(record, transforms))
    for record in new_records:
        store.add_record(record, "train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store.save(out / "dataset.jsonl")
    (out / "manifest.tsv").write_text(store.manifest_text(), encoding="utf-8")
    _echo_config(config, out, {"command": "augment", "transforms": transforms_csv})
    click.echo(f"added {len(new_records)} augmented images")


@main.command("detect")
@config_option
@dataset_option
@out_option
@click.option("--split", "split_name", default="unlabeled", show_default=True)
@click.option("--workers", type=int, default=None, help="Parallel workers (default: cores).")
@guarded
def detect_cmd(config_path, dataset_path, out_dir, split_name, workers):
    """Run the configured backend over a split and write an interchange file."""
    config = config_mod.load_config(config_path)
    store = DatasetStore.load(dataset_path)
    backend = config_mod.build_backend(config, store.classes)
    images = store.images(split_name)
    n_workers = workers or os.cpu_count() or 1
    results = {}
    if backend.kind == "simulated" and n_workers > 1 and len(images) > n_workers:
        chunks = [images[i::n_workers] for i in range(n_workers)]
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for part in pool.map(lambda chunk: detect(backend, chunk), chunks):
                results.update(part)
    else:
        results = detect(backend, images)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "detections.tsv").write_text(
        emit_detection_file(results, store.classes), encoding="utf-8"
    )
    _echo_config(config, out, {"command": "detect", "split": split_name})
    total = sum(len(v) for v in results.values())
    click.echo(f"wrote {total} detections for {len(images)} images")


@main.command("evaluate")
@config_option
@dataset_option
@out_option
@click.option("--detections", "detections_path", type=click.Path(dir_okay=False), required=True)
@click.option("--split", "split_name", default="test", show_default=True)
@click.option("--iou", type=float, default=0.5, show_default=True)
@click.option("--confidence", type=float, default=0.5, show_default=True)
@click.option("--skip-map-50-95", is_flag=True, default=False)
@guarded
def evaluate_cmd(
    config_path, dataset_path, out_dir, detections_path, split_name, iou, confidence, skip_map_50_95
):
    """Score detections against a split's ground truth."""
    config = config_mod.load_config(config_path)
    store = DatasetStore.load(dataset_path)
    detections = parse_detection_file(
        Path(detections_path).read_text(encoding="utf-8"), store.classes
    )
    records = store.images(split_name)
    report = evaluate(
        detections,
        records,
        store.classes,
        iou_threshold=iou,
        confidence_threshold=confidence,
        with_map_50_95=not skip_map_50_95,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "metrics.kv").write_text(report.to_kv(), encoding="utf-8")
    (out / "confusion.tsv").write_text(report.confusion.to_grid(), encoding="utf-8")
    _echo_config(
        config,
        out,
        {"command": "evaluate", "split": split_name, "iou": iou, "confidence": confidence},
    )
    click.echo(report.to_text())


@main.command("loop")
@config_option
@dataset_option
@out_option
@guarded
def loop_cmd(config_path, dataset_path, out_dir):
    """Run the self-training loop described by the config."""
    config = config_mod.load_config(config_path)
    store = DatasetStore.load(dataset_path)
    backend = config_mod.build_backend(config, store.classes)
    loop_config = config_mod.build_loop_config(config, backend)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store.path = out / "dataset.jsonl"
    queue = ReviewQueue(path=out / "tasks.jsonl")
    records = run_loop(store, loop_config, queue, out)
    store.save()
    _echo_config(config, out, {"command": "loop"})
    for record in records:
        click.echo(
            f"iteration {record.iteration}: promoted {record.instances_promoted} instances"
            f" on {record.images_pseudo_labeled} images, flagged {record.images_flagged}"
        )
    if not records:
        click.echo("nothing to do: unlabeled pool is empty")


@main.command("select")
@config_option
@out_option
@click.option("--detections", "detections_path", type=click.Path(dir_okay=False), required=True)
@click.option("--classes", "classes_csv", default=None)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--budget", type=int, default=None, help="Default: all images.")
@guarded
def select_cmd(config_path, out_dir, detections_path, classes_csv, threshold, budget):
    """Rank images for review by uncertainty and write the ordering."""
    config = config_mod.load_config(config_path)
    if classes_csv:
        config["classes"] = [c.strip() for c in classes_csv.split(",")]
    classes = config_mod.build_class_table(config)
    detections = parse_detection_file(
        Path(detections_path).read_text(encoding="utf-8"), classes
    )
    ranked = active_mod.rank_uncertain(
        detections, threshold, budget if budget is not None else len(detections)
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{s.image_id}\t{s.score!r}\t{s.basis}" for s in ranked]
    (out / "selection.tsv").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    _echo_config(config, out, {"command": "select", "threshold": threshold})
    click.echo(f"ranked {len(ranked)} images")


@main.command("fuse")
@config_option
@out_option
@click.option("--primary", "primary_path", type=click.Path(dir_okay=False), required=True)
@click.option("--secondary", "secondary_path", type=click.Path(dir_okay=False), required=True)
@click.option("--classes", "classes_csv", default=None)
@click.option("--iou", type=float, default=0.5, show_default=True)
@guarded
def fuse_cmd(config_path, out_dir, primary_path, secondary_path, classes_csv, iou):
    """Merge two backends' detection files with class-aware suppression."""
    config = config_mod.load_config(config_path)
    if classes_csv:
        config["classes"] = [c.strip() for c in classes_csv.split(",")]
    classes = config_mod.build_class_table(config)
    primary = parse_detection_file(Path(primary_path).read_text(encoding="utf-8"), classes)
    secondary = parse_detection_file(Path(secondary_path).read_text(encoding="utf-8"), classes)
    merged = {}
    origins_lines = []
    for image_id in sorted(set(primary) | set(secondary)):
        survivors = merge_backends(
            primary.get(image_id, []), secondary.get(image_id, []), iou
        )
        merged[image_id] = [s.detection for s in survivors]
        for s in survivors:
            origins_lines.append(f"{image_id}\t{classes.name(s.detection.class_id)}\t{s.origin}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "detections.tsv").write_text(emit_detection_file(merged, classes), encoding="utf-8")
    (out / "origins.tsv").write_text(
        "\n".join(origins_lines) + ("\n" if origins_lines else ""), encoding="utf-8"
    )
    _echo_config(config, out, {"command": "fuse", "iou": iou})
    click.echo(f"fused {sum(len(v) for v in merged.values())} detections")


@main.command("cost")
@config_option
@click.option("--images", "n_images", type=int, required=True)
@click.option("--review-fraction", type=float, default=1.0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@guarded
def cost_cmd(config_path, n_images, review_fraction, out_dir):
    """Compare manual labeling time against the machine-plus-review hybrid."""
    config = config_mod.load_config(config_path)
    model = config_mod.build_cost_model(config)
    report = active_mod.annotation_cost(n_images, model, review_fraction)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "cost.txt").write_text(report.to_text(), encoding="utf-8")
        _echo_config(config, out, {"command": "cost", "images": n_images})
    click.echo(report.to_text(), nl=False)


@main.command("export")
@config_option
@dataset_option
@out_option
@click.option("--format", "label_format", type=click.Choice(["yolo", "voc"]), required=True)
@click.option("--split", "split_name", default="train", show_default=True)
@guarded
def export_cmd(config_path, dataset_path, out_dir, label_format, split_name):
    """Write a split's labels as YOLO text or VOC XML files."""
    config = config_mod.load_config(config_path)
    store = DatasetStore.load(dataset_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = store.images(split_name)
    for record in records:
        if label_format == "yolo":
            text = export_yolo(list(record.instances), record.width, record.height, store.classes)
            (out / f"{record.image_id}.txt").write_text(text, encoding="utf-8")
        else:
            text = export_voc(
                record.image_id, record.width, record.height, list(record.instances), store.classes
            )
            (out / f"{record.image_id}.xml").write_text(text, encoding="utf-8")
    _echo_config(config, out, {"command": "export", "format": label_format, "split": split_name})
    click.echo(f"exported {len(records)} label files")


@main.command("serve")
@config_option
@dataset_option
@click.option("--queue", "queue_path", type=click.Path(dir_okay=False), default=None)
@click.option("--workdir", type=click.Path(file_okay=False), default="runs/service")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@guarded
def serve_cmd(config_path, dataset_path, queue_path, workdir, host, port):
    """Start the review/loop HTTP service."""
    import uvicorn

    from autolabel.service import ServiceContext, create_app

    config = config_mod.load_config(config_path)
    store = DatasetStore.load(dataset_path)
    loop_config = None
    if config.get("backend"):
        backend = config_mod.build_backend(config, store.classes)
        loop_config = config_mod.build_loop_config(config, backend)
    queue = (
        ReviewQueue.load(queue_path)
        if queue_path and Path(queue_path).exists()
        else ReviewQueue(path=queue_path)
    )
    ctx = ServiceContext(
        store=store, queue=queue, workdir=Path(workdir), loop_config=loop_config
    )
    uvicorn.run(create_app(ctx), host=host, port=port)


if __name__ == "__main__":
    main()
