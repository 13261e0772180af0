import json
import re
import time

import numpy as np
import pytest

from coordtok.codec import quantize_box
from coordtok.io import (LoadError, dump_ground_truth, load_ground_truth, load_predictions,
                         parse_ground_truth)
from coordtok.seqfmt import PayloadKind, PredictionRecord, serialize_text

from strategies import fuzz_case, seed_corpus

DATA = "tests/data"


def minimal():
    return {"images": [{"id": 1, "width": 100, "height": 50}],
            "categories": [{"id": 3, "name": "cat"}],
            "annotations": [{"image_id": 1, "category_id": 3, "bbox": [10, 5, 20, 10]}]}


def test_minimal_file():
    gt = parse_ground_truth(minimal())
    assert len(gt.annotations) == 1
    (b,) = gt.boxes(1)
    assert b.box == (10, 5, 30, 15) and b.label == "cat"
    assert parse_ground_truth(dump_ground_truth(gt)).annotations == gt.annotations


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["annotations"][0].update(category_id=9), "annotations[0]"),
    (lambda d: d["annotations"][0].update(image_id=2), "unknown image_id"),
    (lambda d: d["images"][0].update(width=0), "images[0]"),
    (lambda d: d["annotations"][0].update(bbox=[1, 2, 3]), "bbox"),
    (lambda d: d["annotations"][0].update(bbox=[1, 2, -3, 4]), "negative"),
    (lambda d: d["annotations"][0].update(segmentation=[1, 2, 3]), "polygon"),
    (lambda d: d["annotations"][0].update(keypoints=[1, 2, 2]), "keypoints"),
    (lambda d: d.pop("categories"), "categories"),
    (lambda d: d["images"].append({"id": 1, "width": 5, "height": 5}), "duplicate"),
])
def test_schema_errors_name_the_record(mutate, needle):
    doc = minimal()
    mutate(doc)
    with pytest.raises(LoadError, match=re.escape(needle)):
        parse_ground_truth(doc)


def test_boxes_clamped_to_extent():
    doc = minimal()
    doc["annotations"][0]["bbox"] = [-10, 40, 200, 30]
    (b,) = parse_ground_truth(doc).boxes(1)
    assert b.box == (0, 40, 100, 50)


def test_masks_lazy_with_box_fallback():
    gt = load_ground_truth(f"{DATA}/gt.json")
    assert gt._masks == {}
    masks = gt.masks(1)
    assert [lab for _, lab in masks] == ["person", "dog"]
    assert masks[0][0].area == 200 * 400
    assert masks[1][0].area == 300 * 200
    assert len(gt._masks) == 2


def test_keypoints_and_counts():
    gt = load_ground_truth(f"{DATA}/gt.json")
    (inst,) = gt.keypoint_instances(1)
    assert inst.keypoints == {"nose": (200, 150, 2), "hand": (120, 300, 2)}
    assert gt.count(1) == 2 and gt.count(2) == 1


def test_large_file_loads_quickly(tmp_path):
    rng = np.random.default_rng(0)
    doc = {"images": [{"id": i, "width": 640, "height": 480} for i in range(5000)],
           "categories": [{"id": c, "name": f"c{c}"} for c in range(10)],
           "annotations": [{"image_id": int(rng.integers(5000)), "category_id": int(rng.integers(10)),
                            "bbox": [float(v) for v in rng.uniform(0, 300, 4)]} for _ in range(20000)]}
    p = tmp_path / "big.json"
    p.write_text(json.dumps(doc))
    t = time.perf_counter()
    gt = load_ground_truth(p)
    assert time.perf_counter() - t < 2.0
    assert len(gt.images) == 5000


def test_serializer_file_has_no_diagnostics(tmp_path):
    gt = load_ground_truth(f"{DATA}/gt.json")
    lines = []
    for i in gt.image_ids:
        ext = gt.extent(i)
        by = {}
        for b in gt.boxes(i):
            by.setdefault(b.label, []).append(quantize_box(b.box, ext))
        recs = [PredictionRecord(k, PayloadKind.BOX, sorted(v)) for k, v in by.items()]
        lines.append(f"{i}\t{serialize_text(recs)}")
    p = tmp_path / "p.txt"
    p.write_text("\n".join(lines) + "\n")
    pred = load_predictions(p, gt)
    assert pred.diagnostics == []
    assert [len(pred.get(i).boxes) for i in gt.image_ids] == [2, 1]


def test_unknown_image_is_a_line_diagnostic():
    gt = load_ground_truth(f"{DATA}/gt.json")
    pred = load_predictions(f"{DATA}/pred.txt", gt)
    assert [(ln, iid) for ln, iid, _ in pred.diagnostics] == [(3, "9")]
    assert len(pred.get(2).boxes) == 4


def test_fuzzed_prediction_file(tmp_path):
    gt = load_ground_truth(f"{DATA}/gt.json")
    rng = np.random.default_rng(3)
    corpus = seed_corpus(rng, 20)
    lines = []
    for _ in range(500):
        raw = fuzz_case(rng, corpus).replace("\n", " ").replace("\r", " ")
        lead = str(rng.choice(["1", "2", "7", "x", ""]))
        lines.append(f"{lead}\t{raw}" if rng.random() < 0.9 else raw.replace("\t", " "))
    p = tmp_path / "fuzz.txt"
    p.write_text("\n".join(lines))
    pred = load_predictions(p, gt, PayloadKind.BOX)
    diagnosed = {ln for ln, _, _ in pred.diagnostics}
    for ln, line in enumerate(lines, 1):
        if line.strip() and "\t" not in line:
            assert ln in diagnosed


def test_structured_json_and_scores(tmp_path):
    gt = load_ground_truth(f"{DATA}/gt.json")
    pred = load_predictions(f"{DATA}/pred_scored.json", gt)
    assert pred.has_scores and pred.diagnostics == []
    assert pred.get(1).scores == [0.9, 0.3, 0.8]
    assert not load_predictions(f"{DATA}/pred.txt", gt).has_scores
    bad = [{"image_id": 1, "label": "dog", "bbox": [0, 0, 1, 1], "score": 2},
           {"image_id": 1, "label": "dog", "bbox": [5, 0, 1, 1]},
           {"image_id": 77, "label": "dog", "bbox": [0, 0, 1, 1]},
           {"label": "dog"}, "junk",
           {"image_id": 2, "sequence": "<|object_ref_start|>dog<|object_ref_end|><|box_start|><1><2><3><4><|box_end|>"}]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(bad))
    pred = load_predictions(p, gt)
    assert [k for k, _, _ in pred.diagnostics] == [0, 1, 2, 3, 4]
    assert len(pred.get(2).boxes) == 1
    p.write_text("[{")
    with pytest.raises(LoadError):
        load_predictions(p, gt)
