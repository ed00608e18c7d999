"""Acceptance suite: one test per release criterion, one PASS line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
report. Tolerances are pinned in the assertions, not configurable.
"""

from __future__ import annotations

import math
import random
import statistics
import sys
import time
from contextlib import contextmanager

import mpmath
import pytest

from autolabel.active import CostModel, annotation_cost, rank_uncertain
from autolabel.backends import (
    BackendDescriptor,
    NoiseModel,
    detect,
    emit_detection_file,
    parse_detection_file,
)
from autolabel.dataset import (
    ClassTable,
    DatasetStore,
    ImageRecord,
    Instance,
    export_voc,
    export_yolo,
    import_voc,
    import_yolo,
    resolve_voc_classes,
    split,
)
from autolabel.errors import BackendError
from autolabel.fusion import (
    EmbeddingVector,
    cosine_similarity,
    emit_embedding_file,
    parse_embedding_file,
)
from autolabel.geometry import BoundingBox, Detection, iou, nms
from autolabel.metrics import (
    average_precision,
    confusion_matrix,
    count_errors,
    evaluate,
    match,
    match_image,
    recall_fnr_consistent,
)
from autolabel.review import ReviewQueue
from autolabel.selfloop import LoopConfig, run_loop
from conftest import (
    brute_force_nms,
    non_overlapping_record,
    random_box,
    random_detection,
    random_record,
)
from test_metrics import enumerate_thresholds_ap

CLASSES = ClassTable(("broiler", "hen"))


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except BaseException:
        print(f"criterion {number:2d}: FAIL — {title}")
        raise
    print(f"criterion {number:2d}: PASS — {title}")


# ---------------------------------------------------------------------------


def test_c01_cost_model_reproduction():
    with criterion(1, "cost model reproduces the published annotation timings"):
        started = time.monotonic()
        report = annotation_cost(3000, CostModel(), review_fraction=1.0)
        elapsed = time.monotonic() - started
        assert abs(report.manual_total_hours - 118.05) <= 0.01
        assert abs(report.hybrid_total_hours - 23.88) <= 0.01
        assert abs(report.savings_fraction - 0.798) <= 0.001
        assert report.working_days_manual == 15
        assert elapsed < 1.0


def test_c02_split_reproduction():
    tiers = {25: (15, 5, 5), 50: (30, 10, 10), 100: (60, 20, 20), 200: (120, 40, 40)}
    with criterion(2, "splits reproduce every dataset tier exactly, per class"):
        rng = random.Random(2)
        for class_id in (0, 1):
            for n, expected in tiers.items():
                records = []
                for k in range(n):
                    box = random_box(rng, 640, 480)
                    records.append(
                        ImageRecord(
                            f"c{class_id}-{k:04d}", 640, 480, (Instance(box, class_id),)
                        )
                    )
                result = split(records, (0.6, 0.2, 0.2), seed=7)
                got = (len(result.train), len(result.val), len(result.test))
                assert got == expected, f"tier {n}: {got} != {expected}"


# (recall %, FNR %) rows as printed in the published prediction tables;
# the single row that breaks the complement identity beyond the 0.1pp
# rounding budget is listed separately and must be detected, not ignored.
REPORTED_RECALL_FNR = [
    (68.0, 32.0), (0.0, 100.0), (34.0, 66.0),
    (50.2, 49.8), (0.0, 100.0), (25.1, 74.9),
    (24.9, 75.1), (96.7, 3.3), (60.8, 39.2),
    (99.5, 0.5), (99.9, 0.1), (99.7, 0.3),
    (99.5, 0.5), (99.2, 0.8), (99.4, 0.6),
    (99.4, 0.6), (99.9, 0.1), (99.7, 0.3),
    (99.5, 0.5), (98.5, 1.5), (99.0, 1.0),
    (99.6, 0.4), (99.7, 0.3), (99.7, 0.3),
    (98.3, 1.7), (98.1, 1.9), (98.2, 1.8),
    (96.5, 3.5), (93.8, 6.2), (95.2, 4.8),
    (99.2, 0.8), (98.9, 1.1), (99.1, 0.9),
    (99.7, 0.3), (99.9, 0.1), (99.8, 0.2),
    (99.6, 0.4), (99.3, 0.7), (99.5, 0.5),
    (99.3, 0.7), (99.3, 0.7), (99.3, 0.7),
    (99.7, 0.3), (99.8, 0.2), (99.8, 0.2),
    # size tiers
    (99.3, 0.7), (99.7, 0.3), (99.5, 0.5),
    (99.7, 0.3), (99.6, 0.4),
    (99.5, 0.6), (99.4, 0.6), (99.5, 0.6),
    (99.4, 0.6), (99.9, 0.2), (99.7, 0.4),
    # confidence sweeps
    (99.7, 0.3), (100.0, 0.0), (99.9, 0.2),
    (99.7, 0.3), (100.0, 0.0), (99.9, 0.2),
    (99.1, 0.9), (99.1, 0.9), (99.1, 0.9),
    (94.1, 5.9), (89.6, 10.4), (91.9, 8.2),
    # correction-method comparison
    (99.1, 0.9), (99.1, 0.9), (99.1, 0.9),
    (99.6, 0.4), (99.8, 0.2), (99.7, 0.3),
]
# Size-tier table, 100-image row, first class: printed recall 99.4 with
# FNR 0.4 is off by 0.2pp; one of the two cells is a misprint in the source.
MISPRINTED_ROW = (99.4, 0.4)


def test_c03_metric_identities_on_reported_rows():
    with criterion(3, "FNR = 1 - recall holds on every consistent published row"):
        violations = [
            row for row in REPORTED_RECALL_FNR if not recall_fnr_consistent(*row)
        ]
        assert violations == [], f"unexpected identity violations: {violations}"
        # the checker must catch the known misprint rather than absorb it
        assert not recall_fnr_consistent(*MISPRINTED_ROW)
        # MSE 1.2 pairs with the printed RMSE 1.09 within table rounding
        assert abs(math.sqrt(1.2) - 1.09) < 0.01


# ---------------------------------------------------------------------------


def exhaustive_max_matching(dets, gts, threshold) -> int:
    """Enumerate every injective detection-to-truth assignment (with pruning)."""
    feasible = []
    for d in dets:
        feasible.append(
            [
                j
                for j, g in enumerate(gts)
                if g.class_id == d.class_id and iou(d.box, g.box) >= threshold
            ]
        )
    best = 0
    taken = [False] * len(gts)

    def walk(i: int, matched: int):
        nonlocal best
        if matched + (len(dets) - i) <= best:
            return
        if i == len(dets):
            best = max(best, matched)
            return
        for j in feasible[i]:
            if not taken[j]:
                taken[j] = True
                walk(i + 1, matched + 1)
                taken[j] = False
        walk(i + 1, matched)

    walk(0, 0)
    return best


def high_precision_cosine(a, b) -> float:
    with mpmath.workdps(50):
        dot = mpmath.fsum(mpmath.mpf(x) * mpmath.mpf(y) for x, y in zip(a, b))
        na = mpmath.sqrt(mpmath.fsum(mpmath.mpf(x) ** 2 for x in a))
        nb = mpmath.sqrt(mpmath.fsum(mpmath.mpf(y) ** 2 for y in b))
        return float(dot / (na * nb))


def test_c04_oracle_equivalence_suites():
    with criterion(4, "five implementation-vs-oracle suites agree at tolerance"):
        started = time.monotonic()
        rng = random.Random(404)

        for _ in range(1000):  # suppression vs quadratic reference, n <= 50
            dets = [random_detection(rng) for _ in range(rng.randrange(0, 51))]
            threshold = rng.random()
            assert nms(dets, threshold) == brute_force_nms(dets, threshold)

        greedy_vs_optimal_gaps = 0
        for _ in range(1000):  # greedy matching vs exhaustive assignment, n <= 6
            dets = [random_detection(rng) for _ in range(rng.randrange(0, 7))]
            gts = [Instance(random_box(rng), rng.randrange(2)) for _ in range(rng.randrange(0, 7))]
            threshold = rng.choice([0.3, 0.5, 0.7])
            greedy = sum(match_image(dets, gts, threshold).tp.values())
            optimal = exhaustive_max_matching(dets, gts, threshold)
            assert greedy <= optimal
            greedy_vs_optimal_gaps += greedy != optimal
        # greedy-by-confidence may fall one pair short of the optimum; the
        # suite documents how often instead of hiding it
        assert greedy_vs_optimal_gaps <= 20
        print(f"  greedy matched the optimal assignment on {1000 - greedy_vs_optimal_gaps}/1000 runs")

        for _ in range(1000):  # AP vs per-cutoff recomputation, <= 10 detections
            dets_by_image, gts_by_image = {}, {}
            remaining = 10
            for k in range(rng.randrange(1, 4)):
                image_id = f"i{k}"
                n = rng.randrange(0, min(remaining, 5))
                remaining -= n
                dets_by_image[image_id] = [random_detection(rng, 1) for _ in range(n)]
                gts_by_image[image_id] = [
                    Instance(random_box(rng), 0) for _ in range(rng.randrange(0, 5))
                ]
            threshold = rng.choice([0.3, 0.5, 0.7])
            mine = average_precision(dets_by_image, gts_by_image, 0, threshold)
            oracle = enumerate_thresholds_ap(dets_by_image, gts_by_image, 0, threshold)
            if oracle is None:
                assert mine is None
            else:
                assert abs(mine - oracle) <= 1e-9

        for _ in range(1000):  # count errors vs recomputation
            n = rng.randrange(1, 30)
            true = [rng.randrange(0, 80) for _ in range(n)]
            pred = [rng.randrange(0, 80) for _ in range(n)]
            mae, mse, rmse = count_errors(true, pred)
            assert abs(mae - statistics.fmean(abs(a - b) for a, b in zip(true, pred))) <= 1e-12
            assert abs(mse - statistics.fmean((a - b) ** 2 for a, b in zip(true, pred))) <= 1e-12
            assert abs(rmse - math.sqrt(mse)) <= 1e-12

        for _ in range(1000):  # cosine vs 50-digit evaluation
            dim = rng.randrange(2, 10)
            a = [rng.uniform(-5, 5) for _ in range(dim)]
            b = [rng.uniform(-5, 5) for _ in range(dim)]
            mine = cosine_similarity(
                EmbeddingVector(tuple(a)), EmbeddingVector(tuple(b))
            )
            assert abs(mine - high_precision_cosine(a, b)) <= 1e-12

        elapsed = time.monotonic() - started
        print(f"  all five suites finished in {elapsed:.1f} s")
        assert elapsed < 60.0


def test_c05_threshold_sweep_directions():
    with criterion(5, "raising the confidence threshold trades recall for precision"):
        rng = random.Random(600)
        records = [random_record(rng, f"s{k:03d}", 10) for k in range(250)]
        noise = NoiseModel(
            dropout_rate=0.08,
            spurious_rate=1.5,
            jitter_sigma=2.0,
            confusion=((0.94, 0.06), (0.06, 0.94)),
        )
        backend = BackendDescriptor(
            "sweep", "simulated", CLASSES, {"noise": noise, "seed": 1}
        )
        detections = detect(backend, records)
        ground_truth = {r.image_id: list(r.instances) for r in records}
        precisions, recalls, fnrs = [], [], []
        for threshold in (0.125, 0.25, 0.5, 0.75):
            result = match(detections, ground_truth, 0.5, threshold)
            tp = sum(result.tp.values())
            fp = sum(result.fp.values())
            fn = sum(result.fn.values())
            precisions.append(tp / (tp + fp))
            recalls.append(tp / (tp + fn))
            fnrs.append(fn / (fn + tp))
        assert all(b >= a for a, b in zip(precisions, precisions[1:])), precisions
        assert all(b <= a for a, b in zip(recalls, recalls[1:])), recalls
        assert all(b >= a for a, b in zip(fnrs, fnrs[1:])), fnrs
        assert precisions[-1] > precisions[0]
        assert fnrs[-1] > fnrs[0]


def build_pool_world(n_unlabeled: int, instances_per_image: int, seed: int):
    # disjoint instances: the noiseless scenarios require ground truth to
    # pass duplicate suppression untouched
    rng = random.Random(seed)
    store = DatasetStore(CLASSES)
    truth = {}
    for k in range(8):
        store.add_record(
            non_overlapping_record(rng, f"train-{k:03d}", instances_per_image), "train"
        )
    for k in range(5):
        store.add_record(
            non_overlapping_record(rng, f"val-{k:03d}", instances_per_image), "val"
        )
    for k in range(5):
        store.add_record(
            non_overlapping_record(rng, f"test-{k:03d}", instances_per_image), "test"
        )
    for k in range(n_unlabeled):
        full = non_overlapping_record(rng, f"pool-{k:05d}", instances_per_image)
        truth[full.image_id] = list(full.instances)
        store.add_record(
            ImageRecord(full.image_id, full.width, full.height, labeled=False), "unlabeled"
        )
    return store, truth


def test_c06_noiseless_end_to_end_identity(tmp_path):
    with criterion(6, "noiseless loop promotes a 1500-image pool perfectly in one pass"):
        store, truth = build_pool_world(1500, 10, seed=66)
        backend = BackendDescriptor(
            "oracle", "simulated", CLASSES, {"noise": NoiseModel(), "seed": 0, "truth": truth}
        )
        config = LoopConfig(backend=backend, max_iterations=5)
        records = run_loop(store, config, ReviewQueue(), tmp_path / "run")
        assert len(records) == 1
        assert records[0].images_pseudo_labeled == 1500
        assert records[0].images_flagged == 0
        assert store.images("unlabeled") == []

        promoted_as_detections = {}
        for image_id, instances in truth.items():
            promoted = store.get(image_id).instances
            assert [(i.box, i.class_id) for i in promoted] == [
                (i.box, i.class_id) for i in instances
            ]
            assert all(i.provenance == "pseudo" and i.source_iteration == 1 for i in promoted)
            promoted_as_detections[image_id] = [
                Detection(i.box, i.class_id, 1.0) for i in promoted
            ]

        truth_records = [
            ImageRecord(image_id, 640, 480, tuple(instances))
            for image_id, instances in truth.items()
        ]
        report = evaluate(
            promoted_as_detections, truth_records, CLASSES, 0.5, 0.5, with_map_50_95=False
        )
        assert report.overall.precision == 1.0
        assert report.overall.recall == 1.0
        assert report.overall.mae == 0.0
        assert report.overall.mse == 0.0
        assert report.overall.rmse == 0.0
        assert report.confusion.off_diagonal_total() == 0


def test_c07_dataset_size_trend():
    with criterion(7, "recall and F1 never degrade as the training tier grows"):
        rng = random.Random(700)
        eval_records = [random_record(rng, f"e{k:03d}", 15) for k in range(100)]
        curve = {
            50: {"dropout_rate": 0.25, "jitter_sigma": 5.0},
            100: {"dropout_rate": 0.15, "jitter_sigma": 3.0},
            200: {"dropout_rate": 0.07, "jitter_sigma": 1.5},
            400: {"dropout_rate": 0.02, "jitter_sigma": 0.5},
        }
        noise = NoiseModel(dropout_rate=0.4, accuracy_curve=curve)
        backend = BackendDescriptor(
            "curve", "simulated", CLASSES, {"noise": noise, "seed": 7}
        )
        recalls, f1s = [], []
        for size in (50, 100, 200, 400):
            detections = detect(backend, eval_records, train_size=size)
            report = evaluate(
                detections, eval_records, CLASSES, 0.5, 0.25, with_map_50_95=False
            )
            recalls.append(report.overall.recall)
            f1s.append(report.overall.f1)
        assert all(b >= a for a, b in zip(recalls, recalls[1:])), recalls
        assert all(b >= a for a, b in zip(f1s, f1s[1:])), f1s
        assert recalls[-1] > recalls[0]


def _selection_images_needed(seed: int, strategy: str, target=0.90, budget=5) -> int:
    """Images a strategy must hand to annotators before hitting target recall.

    Half of the pool is hard for the detector (heavy dropout, hesitant
    confidences) until enough hard images have been labeled; skill is the
    count of labeled hard images.
    """
    rng = random.Random(seed)
    pool = {}
    for k in range(120):
        record = random_record(rng, f"p{k:03d}", 8)
        pool[record.image_id] = (record, rng.random() < 0.5)
    eval_set = [(random_record(rng, f"e{k:03d}", 8), k % 2 == 0) for k in range(60)]
    easy_noise = NoiseModel(dropout_rate=0.05)

    def hard_noise(skill: int) -> NoiseModel:
        return NoiseModel(dropout_rate=max(0.02, 0.8 - 0.04 * skill), conf_hi=(2.0, 5.0))

    def detect_mixed(hard_records, easy_records, skill):
        out = {}
        if hard_records:
            backend = BackendDescriptor(
                "hard", "simulated", CLASSES, {"noise": hard_noise(skill), "seed": seed}
            )
            out.update(detect(backend, hard_records))
        if easy_records:
            backend = BackendDescriptor(
                "easy", "simulated", CLASSES, {"noise": easy_noise, "seed": seed}
            )
            out.update(detect(backend, easy_records))
        return out

    def eval_recall(skill: int) -> float:
        detections = detect_mixed(
            [r for r, hard in eval_set if hard],
            [r for r, hard in eval_set if not hard],
            skill,
        )
        ground_truth = {r.image_id: list(r.instances) for r, _ in eval_set}
        result = match(detections, ground_truth, 0.5, 0.0)
        tp = sum(result.tp.values())
        fn = sum(result.fn.values())
        return tp / (tp + fn)

    skill = labeled = 0
    while pool:
        if eval_recall(skill) >= target:
            return labeled
        detections = detect_mixed(
            [r for r, hard in pool.values() if hard],
            [r for r, hard in pool.values() if not hard],
            skill,
        )
        if strategy == "uncertainty":
            chosen = [s.image_id for s in rank_uncertain(detections, 0.5, budget)]
        else:
            chosen = rng.sample(sorted(pool), min(budget, len(pool)))
        for image_id in chosen:
            _, is_hard = pool.pop(image_id)
            skill += is_hard
            labeled += 1
    return labeled


def test_c08_active_learning_benefit():
    with criterion(8, "uncertainty selection reaches target recall on fewer labels"):
        uncertainty, randomized = [], []
        for seed in range(25):
            uncertainty.append(_selection_images_needed(seed, "uncertainty"))
            randomized.append(_selection_images_needed(seed, "random"))
        med_uncertainty = statistics.median(uncertainty)
        med_random = statistics.median(randomized)
        print(
            f"  median labeled images: uncertainty {med_uncertainty}, random {med_random}"
        )
        assert med_uncertainty <= med_random


def test_c09_format_fidelity():
    with criterion(9, "1000-instance fuzzed round trips stay lossless"):
        rng = random.Random(909)

        instances = [
            Instance(random_box(rng, 1920, 1080), rng.randrange(2)) for _ in range(1000)
        ]
        text = export_yolo(instances, 1920, 1080, CLASSES)
        back = import_yolo(text, 1920, 1080, CLASSES)
        assert len(back) == 1000
        for original, restored in zip(instances, back):
            assert restored.class_id == original.class_id
            drift = max(
                abs(a - b)
                for a, b in zip(original.box.as_tuple(), restored.box.as_tuple())
            )
            assert drift <= 0.5

        voc_instances = []
        for _ in range(1000):
            x0, y0 = rng.randrange(0, 1800), rng.randrange(0, 1000)
            voc_instances.append(
                Instance(
                    BoundingBox(
                        float(x0),
                        float(y0),
                        float(x0 + rng.randrange(2, 100)),
                        float(y0 + rng.randrange(2, 60)),
                    ),
                    rng.randrange(2),
                )
            )
        xml = export_voc("fuzz", 1920, 1080, voc_instances, CLASSES)
        _, _, _, parsed = import_voc(xml)
        restored = resolve_voc_classes(parsed, CLASSES)
        assert [(i.box.as_tuple(), i.class_id) for i in restored] == [
            (i.box.as_tuple(), i.class_id) for i in voc_instances
        ]
        assert export_voc("fuzz", 1920, 1080, restored, CLASSES) == xml

        detections = {}
        for k in range(100):
            image_id = f"img-{k:03d}"
            detections[image_id] = [
                Detection(random_box(rng), rng.randrange(2), round(rng.random(), 6))
                for _ in range(10)
            ]
        det_text = emit_detection_file(detections, CLASSES)
        det_back = parse_detection_file(det_text, CLASSES)
        assert det_back == detections
        assert emit_detection_file(det_back, CLASSES) == det_text

        embeddings = {
            f"key-{k:04d}": EmbeddingVector(
                tuple(rng.uniform(-4, 4) for _ in range(16))
            )
            for k in range(1000)
        }
        emb_text = emit_embedding_file(embeddings)
        assert parse_embedding_file(emb_text) == embeddings


def test_c10_transactional_loop(tmp_path):
    with criterion(10, "a failed retrain hook leaves the store byte-identical"):
        store, truth = build_pool_world(40, 6, seed=10)
        store.path = tmp_path / "dataset.jsonl"
        store.save()
        before_memory = store.serialize()
        before_disk = store.path.read_bytes()
        backend = BackendDescriptor(
            "oracle", "simulated", CLASSES, {"noise": NoiseModel(), "seed": 0, "truth": truth}
        )
        config = LoopConfig(
            backend=backend,
            retrain_hook=[sys.executable, "-c", "import sys; sys.exit(7)"],
        )
        queue = ReviewQueue(path=tmp_path / "tasks.jsonl")
        with pytest.raises(BackendError):
            run_loop(store, config, queue, tmp_path / "run")
        assert store.serialize() == before_memory
        assert store.path.read_bytes() == before_disk
        assert len(queue) == 0
