import json

import numpy as np
import pytest

from _factories import random_detection_instance
from occlusion_paste.annotations import Annotation
from occlusion_paste.geometry import Rect
from occlusion_paste.metrics import (
    Prediction,
    ap_coco,
    average_precision,
    confidence_csv,
    confidence_report,
    evaluate,
    final_undistinguishable_rate,
    iou,
    match_greedy,
    misdetect_partition,
    misdetect_rate,
    pass_rate,
    read_predictions,
    write_predictions,
)


def box(x, y, w=10, h=10):
    return Rect(float(x), float(y), float(w), float(h))


def gt(i, image, cat, x, y):
    return Annotation(i, image, cat, box(x, y))


def pred(image, cat, x, y, conf):
    return Prediction(image, cat, box(x, y), conf)


def five_image_fixture():
    g = [
        gt(1, 1, 5, 0, 0),
        gt(2, 2, 5, 0, 0),
        gt(3, 2, 5, 50, 50),
        gt(4, 3, 5, 0, 0),
        gt(5, 4, 5, 0, 0),
        gt(6, 4, 6, 30, 0),
        gt(7, 5, 6, 0, 0),
    ]
    p = [
        pred(1, 5, 0, 0, 0.8),
        pred(2, 5, 0, 0, 0.9),
        pred(2, 6, 50, 50, 0.97),
        pred(3, 6, 0, 0, 0.92),
        pred(3, 5, 2, 0, 0.2),
        pred(4, 6, 30, 0, 0.99),
        pred(5, 5, 0, 0, 0.96),
    ]
    return g, p


def test_iou_examples():
    assert iou(box(0, 0), box(0, 0)) == 1.0
    assert iou(box(0, 0), box(20, 20)) == 0.0
    assert iou(box(0, 0), box(5, 0)) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        iou(box(0, 0, 0, 3), box(0, 0))


def test_match_greedy_examples():
    g = [gt(1, 1, 5, 0, 0)]
    (m,) = match_greedy(g, [Prediction(1, 5, box(0, 0, 10, 6), 0.5)])
    assert m.pred == 0 and m.same_category and m.iou == pytest.approx(0.6)
    (m,) = match_greedy(g, [pred(1, 5, 0, 0, 0.3), pred(1, 5, 1, 0, 0.7)])
    assert m.pred == 1
    wrong = [Prediction(1, 6, box(0, 0, 10, 8), 0.9)]
    assert match_greedy(g, wrong).matches[0].pred is None
    (m,) = match_greedy(g, wrong, cross_category=True)
    assert m.pred == 0 and not m.same_category and m.iou == pytest.approx(0.8)
    # equal confidence: earlier prediction first
    (m,) = match_greedy(g, [pred(1, 5, 1, 0, 0.5), pred(1, 5, 0, 0, 0.5)])
    assert m.pred == 0
    with pytest.raises(ValueError):
        match_greedy(g, [pred(2, 5, 0, 0, 0.5)])


def test_prediction_confidence_range():
    with pytest.raises(ValueError):
        pred(1, 1, 0, 0, 1.2)


def test_ap_examples():
    one = [gt(1, 1, 5, 0, 0)]
    assert average_precision(one, [Prediction(1, 5, box(0, 0, 10, 6), 0.6)], 5) == 1.0
    assert average_precision(one, [], 5) == 0.0
    two = one + [gt(2, 1, 5, 40, 40)]
    assert average_precision(two, [pred(1, 5, 0, 0, 0.9)], 5) == pytest.approx(51 / 101)
    assert average_precision(one, [pred(1, 5, 0, 0, 0.9)], 7) is None
    assert ap_coco(one, [pred(1, 5, 0, 0, 0.9)], 5) == 1.0
    assert ap_coco(one, [], 6) is None


def test_pass_rate_examples():
    g = [gt(1, 1, 5, 0, 0), gt(2, 2, 5, 0, 0), gt(3, 2, 5, 30, 30), gt(4, 3, 6, 0, 0)]
    allp = [pred(1, 5, 0, 0, 0.9), pred(2, 5, 0, 0, 0.9), pred(2, 5, 30, 30, 0.9)]
    assert pass_rate(g, allp, 5) == 1.0
    assert pass_rate(g, allp[:2], 5) == 0.5
    assert pass_rate(g, allp, 9) is None


def test_misdetect_examples():
    g = [gt(1, 1, 5, 0, 0)]
    assert misdetect_rate(g, [pred(1, 6, 0, 0, 0.97)], 5, 0.95) == 0.0
    assert misdetect_rate(g, [pred(1, 6, 0, 0, 0.90)], 5, 0.95) == 1.0
    assert misdetect_rate(g, [], 7, 0.9) is None


def test_final_undistinguishable_examples():
    four = [gt(k, 1, 5, 20 * k, 0) for k in range(4)]
    hits = [pred(1, 5, 20 * k, 0, 0.9) for k in range(4)]
    assert final_undistinguishable_rate(four, hits, 5, 0.9) == 0.0
    assert final_undistinguishable_rate(four, hits[:3], 5, 0.9) == 0.25
    two = four[:2]
    assert final_undistinguishable_rate(two, [pred(1, 6, 0, 0, 0.95), pred(1, 5, 20, 0, 0.5)], 5, 0.9) == 0.5


def test_five_image_fixture():
    g, p = five_image_fixture()
    assert pass_rate(g, p, 5) == 0.25
    assert misdetect_rate(g, p, 5, 0.9) == pytest.approx(0.6)
    assert misdetect_rate(g, p, 5, 0.95) == pytest.approx(0.8)
    assert final_undistinguishable_rate(g, p, 5, 0.9) == pytest.approx(0.6)
    assert final_undistinguishable_rate(g, p, 5, 0.95) == pytest.approx(0.4)
    part = misdetect_partition(g, p, 5, 0.95)
    assert (part.misdetected, part.correct, part.unmatched, part.low_confidence) == (1, 2, 1, 1)
    assert average_precision(g, p, 5) == pytest.approx(61 * 0.75 / 101, abs=1e-12)
    assert ap_coco(g, p, 5) == pytest.approx(347 / 1010, abs=1e-12)
    edges, counts = confidence_report(p, 5, 0.1)
    assert counts == [0, 0, 1, 0, 0, 0, 0, 0, 1, 2]


def test_confidence_report_examples():
    assert confidence_report([], 1, 0.1)[1] == [0] * 10
    p = [pred(1, 1, 0, 0, c) for c in (0.91, 0.92, 0.99)] + [pred(1, 2, 0, 0, 0.5)]
    edges, counts = confidence_report(p, 1, 0.1)
    assert counts[9] == 3 and sum(counts) == 3 and edges[-1] == 1.0
    assert confidence_report([pred(1, 1, 0, 0, 1.0)], 1, 0.25)[1] == [0, 0, 0, 1]
    assert confidence_report([pred(1, 1, 0, 0, 0.3)], 1, 0.1)[1][3] == 1
    with pytest.raises(ValueError):
        confidence_report([], 1, 0)
    assert confidence_csv(*confidence_report(p, 1, 0.5)).splitlines() == ["bin_lo,bin_hi,count", "0,0.5,0", "0.5,1,3"]


@pytest.mark.parametrize("seed", range(25))
def test_rates_ignore_prediction_order_and_partition(seed):
    rng = np.random.default_rng(seed)
    g, p = random_detection_instance(rng)
    shuffled = [p[k] for k in rng.permutation(len(p))]
    for tau in (0.5, 0.9):
        assert pass_rate(g, p, 1) == pass_rate(g, shuffled, 1)
        assert misdetect_rate(g, p, 1, tau) == misdetect_rate(g, shuffled, 1, tau)
        assert final_undistinguishable_rate(g, p, 1, tau) == final_undistinguishable_rate(g, shuffled, 1, tau)
        part = misdetect_partition(g, p, 1, tau)
        assert part.total == sum(a.category_id == 1 for a in g)


@pytest.mark.parametrize("seed", range(25))
def test_final_rate_non_increasing_in_tau(seed):
    g, p = random_detection_instance(np.random.default_rng(100 + seed))
    rates = [final_undistinguishable_rate(g, p, 1, t) for t in np.linspace(0, 1, 21)]
    if rates[0] is not None:
        assert all(b <= a + 1e-12 for a, b in zip(rates, rates[1:]))


def test_report_and_prediction_io(tmp_path):
    g, p = five_image_fixture()
    write_predictions(p, tmp_path / "p.jsonl")
    assert read_predictions(tmp_path / "p.jsonl") == p
    rep = evaluate(g, p, [5, 6], taus=(0.9, 0.95))
    doc = json.loads(json.dumps(rep.to_json()))
    c5 = doc["categories"][0]
    assert c5["images"] == 4 and c5["gt_boxes"] == 5 and c5["pass_rate"] == 0.25
    assert c5["misdetect_rate"]["0.95"] >= c5["misdetect_rate"]["0.9"]
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("category,images,gt_boxes,ap50") and len(lines) == 3
