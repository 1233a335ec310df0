import itertools
import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stainaug.errors import MissingColumn, ParseError
from stainaug.metrics import (
    Detection,
    DetectionSet,
    EvalResult,
    evaluate,
    evaluate_per_image,
    load_annotations,
    match_detections,
    report,
    save_annotations,
)


def gt_of(*points, image="A"):
    return DetectionSet.from_points(image, points)


def brute_force_max(gt, pred, radius):
    """Largest one-to-one matching within radius, by exhaustive search."""
    gt, pred = list(gt.entries), list(pred.entries)
    if len(pred) > len(gt):
        gt, pred = pred, gt
    best = 0
    for perm in itertools.permutations(range(len(gt)), len(pred)):
        n = sum(1 for p, g in zip(pred, perm)
                if p.image == gt[g].image and math.hypot(p.x - gt[g].x, p.y - gt[g].y) <= radius)
        best = max(best, n)
    return best


def random_instance(rnd, max_n=6, images=("A",)):
    def points(n, scored):
        return DetectionSet(tuple(
            Detection(rnd.choice(images), rnd.uniform(0, 40), rnd.uniform(0, 40),
                      rnd.random() if scored else 1.0)
            for _ in range(n)))
    return points(rnd.randint(0, max_n), False), points(rnd.randint(0, max_n), True)


def test_greedy_trace_radius_5():
    gt = gt_of((0, 0), (10, 0))
    pred = DetectionSet.from_points("A", [(4, 0), (6, 0)], [0.9, 0.8])
    m = match_detections(gt, pred, 5)
    assert (m.tp, m.fp, m.fn) == (2, 0, 0)
    # (4,0) goes first and takes the nearer (0,0); (6,0) then takes (10,0)
    assert [(p.x, g.x) for p, g in m.matches] == [(4, 0), (6, 10)]
    assert m.tp == brute_force_max(gt, pred, 5)


def test_greedy_radius_3_matches_nothing():
    gt = gt_of((0, 0), (10, 0))
    pred = DetectionSet.from_points("A", [(4, 0), (6, 0)], [0.9, 0.8])
    m = match_detections(gt, pred, 3)
    assert (m.tp, m.fp, m.fn) == (0, 2, 2)


def test_greedy_can_be_suboptimal():
    # the high-score prediction steals the only GT the second one could reach
    gt = gt_of((0, 0), (9, 0))
    pred = DetectionSet.from_points("A", [(4, 0), (0, 3)], [0.9, 0.1])
    assert match_detections(gt, pred, 5).tp == 1
    assert brute_force_max(gt, pred, 5) == 2


def test_distance_tie_goes_to_smaller_xy():
    gt = gt_of((10, 0), (0, 0))
    pred = DetectionSet.from_points("A", [(5, 0)])
    (p, g), = match_detections(gt, pred, 5).matches
    assert (g.x, g.y) == (0, 0)


def test_score_tie_broken_by_x_then_y():
    gt = gt_of((5, 5))
    pred = DetectionSet.from_points("A", [(6, 5), (5, 6), (4, 5)], [0.5, 0.5, 0.5])
    (p, _), = match_detections(gt, pred, 2).matches
    assert (p.x, p.y) == (4, 5)


def test_matching_stays_within_image():
    gt = DetectionSet((Detection("A", 0, 0), Detection("B", 50, 50)))
    pred = DetectionSet((Detection("B", 0, 0, 0.9),))
    m = match_detections(gt, pred, 30)
    assert (m.tp, m.fp, m.fn) == (0, 1, 2)


def test_empty_sets():
    gt = gt_of((1, 1), (2, 2), (3, 3))
    m = match_detections(gt, DetectionSet(()), 30)
    assert (m.tp, m.fp, m.fn) == (0, 0, 3)
    r = evaluate(DetectionSet(()), DetectionSet(()), 30)
    assert (r.tp, r.fp, r.fn, r.precision, r.recall, r.f1) == (0, 0, 0, 0.0, 0.0, 0.0)


def test_pred_equals_gt_is_perfect():
    gt = gt_of((1, 1), (20, 2), (3, 40))
    r = evaluate(gt, gt, 30)
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_radius_must_be_positive():
    with pytest.raises(ValueError):
        match_detections(gt_of((0, 0)), gt_of((0, 0)), 0)


def test_eval_result_arithmetic():
    r = EvalResult.from_counts(60, 17, 23)
    assert r.precision == 60 / 77 and r.recall == 60 / 83
    assert abs(r.precision - 0.7792) <= 5e-5
    assert abs(r.recall - 0.7229) <= 5e-5
    assert abs(r.f1 - 0.7500) <= 5e-5
    # harmonic mean of 60/77 and 60/83 simplifies to 120/160
    assert r.f1 == pytest.approx(0.75, abs=1e-15)


def test_eval_result_zero_precision_recall():
    r = EvalResult.from_counts(0, 4, 3)
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_detection_set_validation():
    with pytest.raises(ValueError):
        DetectionSet((Detection("A", -1, 0),))
    with pytest.raises(ValueError):
        DetectionSet((Detection("A", 1, float("nan")),))
    with pytest.raises(ValueError):
        DetectionSet((Detection("A", 1, 1, 1.5),))


def test_random_instances_invariants():
    rnd = random.Random(17)
    for _ in range(300):
        gt, pred = random_instance(rnd, images=("A", "B"))
        radius = rnd.choice([3, 8, 15])
        m = match_detections(gt, pred, radius)
        assert m.tp + m.fp == len(pred) and m.tp + m.fn == len(gt)
        assert m.tp <= min(len(gt), len(pred))
        assert m.tp <= brute_force_max(gt, pred, radius)
        assert match_detections(gt, pred, radius * 1.5).tp >= m.tp
        for p, g in m.matches:
            assert p.image == g.image and math.hypot(p.x - g.x, p.y - g.y) <= radius


def test_permutation_invariance():
    rnd = random.Random(4)
    for _ in range(100):
        gt, pred = random_instance(rnd)
        counts = match_detections(gt, pred, 10)[:3]
        g2, p2 = list(gt.entries), list(pred.entries)
        rnd.shuffle(g2)
        rnd.shuffle(p2)
        assert match_detections(DetectionSet(tuple(g2)), DetectionSet(tuple(p2)), 10)[:3] == counts


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 100))
def test_f1_is_harmonic_mean(tp, fp, fn):
    r = EvalResult.from_counts(tp, fp, fn)
    assert r.f1 == 2 * r.precision * r.recall / (r.precision + r.recall)


def test_per_image_breakdown():
    gt = DetectionSet((Detection("A", 0, 0), Detection("B", 5, 5)))
    pred = DetectionSet((Detection("A", 1, 0, 0.7), Detection("C", 1, 1, 0.2)))
    per = evaluate_per_image(gt, pred, 5)
    assert sorted(per) == ["A", "B", "C"]
    assert (per["A"].tp, per["B"].fn, per["C"].fp) == (1, 1, 1)
    out = report(gt, pred, 5, per_image=True)
    assert out["tp"] == 1 and set(out["per_image"]) == {"A", "B", "C"}
    json.dumps(out)


def test_load_gt_and_ignore_score(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("image,x,y\nA.png,10,20\n")
    ds = load_annotations(path, "gt")
    assert ds.entries == (Detection("A.png", 10.0, 20.0, 1.0),)
    path.write_text("image,x,y,score\nA.png,10,20,0.3\n")
    assert load_annotations(path, "gt").entries[0].score == 1.0


def test_pred_requires_score(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("image,x,y\nA.png,10,20\n")
    with pytest.raises(MissingColumn):
        load_annotations(path, "pred")


def test_negative_coordinate_reports_line(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("image,x,y\nA.png,-5,20\n")
    with pytest.raises(ParseError, match="line 2") as info:
        load_annotations(path, "gt")
    assert info.value.line == 2


@pytest.mark.parametrize("body, line", [
    ("A.png,1,2\nA.png,abc,2\n", 3),
    ("A.png,1\n", 2),
    ("A.png,1,2\nA.png,1,2,3,4\n", 3),
    (",1,2\n", 2),
    ("A.png,1,inf\n", 2),
])
def test_malformed_rows(tmp_path, body, line):
    path = tmp_path / "g.csv"
    path.write_text("image,x,y\n" + body)
    with pytest.raises(ParseError) as info:
        load_annotations(path, "gt")
    assert info.value.line == line


def test_pred_score_out_of_range(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("image,x,y,score\nA.png,1,2,1.2\n")
    with pytest.raises(ParseError, match="line 2"):
        load_annotations(path, "pred")


def test_annotations_roundtrip(tmp_path):
    ds = DetectionSet((Detection("A", 0.1, 2 / 3, 0.25), Detection("B", 10.0, 7.5, 1.0)))
    save_annotations(ds, tmp_path / "p.csv")
    assert load_annotations(tmp_path / "p.csv", "pred") == ds
