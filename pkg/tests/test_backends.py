"""Simulated oracle behavior, interchange files, and the external protocol."""

from __future__ import annotations

import random
import sys

import pytest

from autolabel.backends import (
    BackendDescriptor,
    NoiseModel,
    detect,
    emit_detection_file,
    parse_detection_file,
    simulate,
)
from autolabel.dataset import ClassTable
from autolabel.errors import BackendError, FormatError, ValidationError
from autolabel.geometry import BoundingBox, Detection, iou
from conftest import random_record


@pytest.fixture
def records():
    rng = random.Random(100)
    return [random_record(rng, f"img-{k:03d}", 10) for k in range(100)]


def simulated_backend(classes, noise, seed=0, truth=None):
    config = {"noise": noise, "seed": seed}
    if truth is not None:
        config["truth"] = truth
    return BackendDescriptor("sim", "simulated", classes, config)


class TestSimulated:
    def test_noiseless_oracle_reproduces_ground_truth(self, classes, records):
        backend = simulated_backend(classes, NoiseModel())
        results = detect(backend, records)
        for record in records:
            dets = results[record.image_id]
            assert len(dets) == len(record.instances)
            for det, inst in zip(dets, record.instances):
                assert det.box == inst.box
                assert det.class_id == inst.class_id
                assert det.confidence == 1.0

    def test_total_dropout_empties_output(self, classes, records):
        backend = simulated_backend(classes, NoiseModel(dropout_rate=1.0))
        results = detect(backend, records)
        assert all(dets == [] for dets in results.values())

    def test_seeded_dropout_recall_matches_replay(self, classes, records):
        noise = NoiseModel(dropout_rate=0.1)
        backend = simulated_backend(classes, noise, seed=5)
        results = detect(backend, records)
        total_instances = sum(len(r.instances) for r in records)
        kept = sum(len(v) for v in results.values())
        assert kept / total_instances == pytest.approx(0.9, abs=0.03)
        # exact count from replaying the per-image seeded stream
        replay = sum(
            len(simulate(record, noise, 5, len(classes))) for record in records
        )
        assert kept == replay

    def test_determinism_and_order_independence(self, classes, records):
        backend = simulated_backend(
            classes, NoiseModel(dropout_rate=0.2, jitter_sigma=2.0, spurious_rate=0.5), seed=9
        )
        a = detect(backend, records)
        b = detect(backend, list(reversed(records)))
        assert a == b

    def test_zero_jitter_keeps_boxes_exact(self, classes, records):
        noise = NoiseModel(dropout_rate=0.3)
        backend = simulated_backend(classes, noise, seed=2)
        results = detect(backend, records)
        by_id = {r.image_id: r for r in records}
        for image_id, dets in results.items():
            gt_boxes = {inst.box.as_tuple() for inst in by_id[image_id].instances}
            for det in dets:
                assert det.box.as_tuple() in gt_boxes
                assert iou(det.box, det.box) == 1.0

    def test_boxes_clamped_inside_image(self, classes, records):
        backend = simulated_backend(classes, NoiseModel(jitter_sigma=30.0), seed=3)
        results = detect(backend, records)
        by_id = {r.image_id: r for r in records}
        for image_id, dets in results.items():
            record = by_id[image_id]
            for det in dets:
                assert 0 <= det.box.x_min < det.box.x_max <= record.width
                assert 0 <= det.box.y_min < det.box.y_max <= record.height

    def test_confusion_rates_within_binomial_bounds(self, classes):
        rng = random.Random(101)
        records = [random_record(rng, f"c{k}", 20) for k in range(200)]
        flip = 0.15
        noise = NoiseModel(confusion=((1 - flip, flip), (flip, 1 - flip)))
        backend = simulated_backend(classes, noise, seed=11)
        results = detect(backend, records)
        by_id = {r.image_id: r for r in records}
        flipped = total = 0
        for image_id, dets in results.items():
            for det, inst in zip(dets, by_id[image_id].instances):
                total += 1
                flipped += det.class_id != inst.class_id
        sigma = (flip * (1 - flip) / total) ** 0.5
        assert flipped / total == pytest.approx(flip, abs=3 * sigma)

    def test_accuracy_curve_monotone_recall(self, classes, records):
        curve = {
            50: {"dropout_rate": 0.3, "jitter_sigma": 4.0},
            100: {"dropout_rate": 0.15, "jitter_sigma": 2.0},
            200: {"dropout_rate": 0.05, "jitter_sigma": 1.0},
        }
        noise = NoiseModel(dropout_rate=0.5, accuracy_curve=curve)
        backend = simulated_backend(classes, noise, seed=13)
        total = sum(len(r.instances) for r in records)
        recalls = []
        for size in (10, 50, 100, 200, 400):
            results = detect(backend, records, train_size=size)
            recalls.append(sum(len(v) for v in results.values()) / total)
        assert recalls == sorted(recalls)

    def test_curve_must_not_increase_dropout(self):
        with pytest.raises(ValidationError):
            NoiseModel(accuracy_curve={10: {"dropout_rate": 0.1}, 20: {"dropout_rate": 0.2}})

    def test_spurious_rate_adds_boxes(self, classes, records):
        backend = simulated_backend(classes, NoiseModel(spurious_rate=2.0), seed=17)
        results = detect(backend, records)
        total_instances = sum(len(r.instances) for r in records)
        total_dets = sum(len(v) for v in results.values())
        extra = total_dets - total_instances
        assert extra / len(records) == pytest.approx(2.0, abs=0.5)


class TestDetectionFile:
    def test_empty_file(self, classes):
        assert parse_detection_file("", classes) == {}

    def test_single_line(self, classes):
        text = "img-1\then\t1.0\t2.0\t11.0\t12.0\t0.750000\n"
        parsed = parse_detection_file(text, classes)
        assert list(parsed) == ["img-1"]
        det = parsed["img-1"][0]
        assert det.class_id == 1
        assert det.confidence == 0.75

    def test_emit_parse_round_trip(self, classes):
        rng = random.Random(102)
        dets = {}
        for k in range(100):
            image_id = f"img-{k:03d}"
            dets[image_id] = []
            for _ in range(10):
                x0, y0 = rng.uniform(0, 80), rng.uniform(0, 80)
                box = BoundingBox(x0, y0, x0 + rng.uniform(1, 20), y0 + rng.uniform(1, 20))
                confidence = round(rng.random(), 6)
                dets[image_id].append(Detection(box, rng.randrange(2), confidence))
        text = emit_detection_file(dets, classes)
        back = parse_detection_file(text, classes)
        assert set(back) == set(dets)
        for image_id in dets:
            assert sorted(back[image_id], key=str) == sorted(dets[image_id], key=str)

    def test_malformed_field_aborts_with_line(self, classes):
        text = "img-1\then\t1\t2\t11\t12\t0.5\nimg-2\then\t1\t2\tbad\t12\t0.5\n"
        with pytest.raises(FormatError, match="line 2"):
            parse_detection_file(text, classes)

    def test_unknown_class_aborts(self, classes):
        with pytest.raises(FormatError, match="ostrich"):
            parse_detection_file("i\tostrich\t1\t2\t3\t4\t0.5\n", classes)

    def test_file_backend_missing_image_warns(self, classes, records, tmp_path, caplog):
        path = tmp_path / "dets.tsv"
        path.write_text("img-000\tbroiler\t1\t2\t11\t12\t0.9\n", encoding="utf-8")
        backend = BackendDescriptor("file", "detection_file", classes, {"path": str(path)})
        with caplog.at_level("WARNING"):
            results = detect(backend, records[:3])
        assert len(results["img-000"]) == 1
        assert results["img-001"] == []
        assert "img-001" in caplog.text


EMITTER = r"""
import sys
manifest, output = sys.argv[1], sys.argv[2]
lines = open(manifest, encoding="utf-8").read().splitlines()[1:]
with open(output, "w", encoding="utf-8") as fh:
    for line in lines:
        if not line.strip():
            continue
        image_id = line.split("\t")[0]
        fh.write(f"{image_id}\tbroiler\t1.0\t1.0\t9.0\t9.0\t0.900000\n")
"""


class TestExternalProcess:
    def test_round_trip_through_subprocess(self, classes, records, tmp_path):
        script = tmp_path / "fake_detector.py"
        script.write_text(EMITTER, encoding="utf-8")
        backend = BackendDescriptor(
            "ext", "external_process", classes, {"command": [sys.executable, str(script)]}
        )
        results = detect(backend, records[:5])
        assert len(results) == 5
        for dets in results.values():
            assert len(dets) == 1
            assert dets[0].class_id == 0

    def test_nonzero_exit_raises(self, classes, records):
        backend = BackendDescriptor(
            "bad", "external_process", classes,
            {"command": [sys.executable, "-c", "import sys; sys.exit(3)"]},
        )
        with pytest.raises(BackendError, match="exited 3"):
            detect(backend, records[:2])

    def test_missing_required_config(self, classes):
        with pytest.raises(ValidationError, match="missing config"):
            BackendDescriptor("x", "external_process", classes, {})
