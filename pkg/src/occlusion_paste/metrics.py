"""Detection scoring: IoU matching, AP, pass rate, mis-detect and final undistinguishable rates.

Ground truth is a list of :class:`Annotation`; predictions are
:class:`Prediction` records. Functions returning a rate give ``None`` when
the rate is undefined (no ground truth to score against).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .annotations import Annotation, FormatError
from .geometry import Rect

__all__ = [
    "Prediction",
    "GtMatch",
    "MatchResult",
    "MetricsReport",
    "CategoryMetrics",
    "iou",
    "match_greedy",
    "average_precision",
    "ap_coco",
    "pass_rate",
    "cross_category_match",
    "misdetect_partition",
    "misdetect_rate",
    "final_undistinguishable_rate",
    "confidence_report",
    "evaluate",
    "read_predictions",
    "write_predictions",
]

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_POINTS = np.arange(101) / 100.0


@dataclass(frozen=True)
class Prediction:
    image_id: int
    category_id: int
    bbox: Rect
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "bbox": self.bbox.as_list(),
            "score": self.confidence,
        }


@dataclass(frozen=True)
class GtMatch:
    gt_id: int
    pred: Optional[int]  # index into the prediction sequence given to the matcher
    iou: float = 0.0
    same_category: bool = False
    confidence: float = 0.0


@dataclass(frozen=True)
class MatchResult:
    matches: tuple[GtMatch, ...]

    def __iter__(self):
        return iter(self.matches)

    def by_gt(self) -> dict[int, GtMatch]:
        return {m.gt_id: m for m in self.matches}

    @property
    def matched_predictions(self) -> set[int]:
        return {m.pred for m in self.matches if m.pred is not None}


def iou(a: Rect, b: Rect) -> float:
    if not (a.area > 0 and b.area > 0):
        raise ValueError(f"degenerate box in iou: {a}, {b}")
    inter = a.intersection_area(b)
    return inter / (a.area + b.area - inter)


def _one_image(records: Iterable) -> None:
    ids = {r.image_id for r in records}
    if len(ids) > 1:
        raise ValueError(f"records span several images: {sorted(ids)}")


def match_greedy(
    gt: Sequence[Annotation],
    preds: Sequence[Prediction],
    iou_min: float = 0.5,
    cross_category: bool = False,
) -> MatchResult:
    """Confidence-ordered greedy matching inside one image.

    Predictions are visited by descending confidence, ties in input order;
    each takes the still-free ground-truth box it overlaps most, provided the
    IoU reaches ``iou_min``. Without ``cross_category`` a prediction only
    considers boxes of its own category.
    """
    _one_image([*gt, *preds])
    order = sorted(range(len(preds)), key=lambda k: -preds[k].confidence)
    taken: dict[int, GtMatch] = {}
    for k in order:
        p = preds[k]
        best, best_iou = None, iou_min
        for g in gt:
            if g.id in taken or (not cross_category and g.category_id != p.category_id):
                continue
            v = iou(g.bbox, p.bbox)
            if v >= best_iou and (best is None or v > best_iou):
                best, best_iou = g, v
        if best is not None:
            taken[best.id] = GtMatch(best.id, k, best_iou, best.category_id == p.category_id, p.confidence)
    return MatchResult(tuple(taken.get(g.id, GtMatch(g.id, None)) for g in gt))


def _group(records, key=lambda r: r.image_id) -> dict[int, list]:
    out: dict[int, list] = {}
    for r in records:
        out.setdefault(key(r), []).append(r)
    return out


def _pr_curve(gt: Sequence[Annotation], preds: Sequence[Prediction], category: int, iou_min: float):
    gts = _group(a for a in gt if a.category_id == category)
    n_gt = sum(len(v) for v in gts.values())
    mine = [p for p in preds if p.category_id == category]
    tp = np.zeros(len(mine), dtype=bool)
    by_image = _group(range(len(mine)), key=lambda k: mine[k].image_id)
    for image_id, idx in by_image.items():
        result = match_greedy(gts.get(image_id, []), [mine[k] for k in idx], iou_min)
        for j in result.matched_predictions:
            tp[idx[j]] = True
    # stable sort: equal confidences keep input order, as in the matcher
    order = sorted(range(len(mine)), key=lambda k: -mine[k].confidence)
    hits = np.cumsum(tp[order]) if order else np.zeros(0)
    precision = hits / np.arange(1, len(order) + 1)
    recall = hits / n_gt if n_gt else hits
    return n_gt, precision, recall


def average_precision(
    gt: Sequence[Annotation], preds: Sequence[Prediction], category: int, iou_min: float = 0.5
) -> Optional[float]:
    """101-point interpolated AP for one category over all images; None without ground truth."""
    n_gt, precision, recall = _pr_curve(gt, preds, category, iou_min)
    if n_gt == 0:
        return None
    if not len(precision):
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    pos = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(pos < len(envelope), envelope[np.minimum(pos, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def ap_coco(gt: Sequence[Annotation], preds: Sequence[Prediction], category: int) -> Optional[float]:
    values = [average_precision(gt, preds, category, t) for t in COCO_THRESHOLDS]
    return None if values[0] is None else float(np.mean(values))


def pass_rate(
    gt: Sequence[Annotation],
    preds: Sequence[Prediction],
    category: int,
    iou_min: float = 0.5,
    conf_min: float = 0.25,
) -> Optional[float]:
    """Share of images with this category's boxes in which every such box is found.

    A box is found when a prediction of the same category with confidence at
    least ``conf_min`` matches it at IoU ``iou_min`` or more.
    """
    gts = _group(a for a in gt if a.category_id == category)
    if not gts:
        return None
    ps = _group(p for p in preds if p.category_id == category and p.confidence >= conf_min)
    passed = 0
    for image_id, boxes in gts.items():
        result = match_greedy(boxes, ps.get(image_id, []), iou_min)
        passed += all(m.pred is not None for m in result)
    return passed / len(gts)


def cross_category_match(
    gt: Sequence[Annotation], preds: Sequence[Prediction], iou_min: float = 0.5
) -> MatchResult:
    """One-to-one matching of one image's boxes to predictions of any category.

    Pairs are taken by descending IoU (ties: ground-truth order, then the
    more confident prediction, then its category and box), so every box gets its best prediction that no
    better-overlapping box claimed first. Confidence plays no part, which
    keeps the partition used by the mis-detect rates independent of the
    threshold.
    """
    _one_image([*gt, *preds])
    pairs = []
    for i, g in enumerate(gt):
        for k, p in enumerate(preds):
            v = iou(g.bbox, p.bbox)
            if v >= iou_min:
                pairs.append((-v, i, -p.confidence, p.category_id, p.bbox.as_list(), k))
    pairs.sort()
    used_g, used_p, found = set(), set(), {}
    for negv, i, *_, k in pairs:
        if i in used_g or k in used_p:
            continue
        used_g.add(i)
        used_p.add(k)
        g, p = gt[i], preds[k]
        found[i] = GtMatch(g.id, k, -negv, g.category_id == p.category_id, p.confidence)
    return MatchResult(tuple(found.get(i, GtMatch(g.id, None)) for i, g in enumerate(gt)))


@dataclass(frozen=True)
class Partition:
    misdetected: int
    correct: int
    unmatched: int
    low_confidence: int

    @property
    def total(self) -> int:
        return self.misdetected + self.correct + self.unmatched + self.low_confidence


def misdetect_partition(
    gt: Sequence[Annotation], preds: Sequence[Prediction], category: int, tau: float, iou_min: float = 0.5
) -> Partition:
    """Split the category's boxes by how their cross-category match went.

    misdetected: matched by another category at confidence >= tau;
    low_confidence: matched by another category below tau;
    correct: matched by the same category; unmatched: nothing at iou_min.
    All boxes of an image compete for predictions, whatever their category.
    """
    gts = _group(gt)
    ps = _group(preds)
    counts = dict(misdetected=0, correct=0, unmatched=0, low_confidence=0)
    for image_id, boxes in gts.items():
        if not any(b.category_id == category for b in boxes):
            continue
        result = cross_category_match(boxes, ps.get(image_id, []), iou_min)
        for g, m in zip(boxes, result):
            if g.category_id != category:
                continue
            if m.pred is None:
                counts["unmatched"] += 1
            elif m.same_category:
                counts["correct"] += 1
            elif m.confidence >= tau:
                counts["misdetected"] += 1
            else:
                counts["low_confidence"] += 1
    return Partition(**counts)


def misdetect_rate(
    gt: Sequence[Annotation], preds: Sequence[Prediction], category: int, tau: float, iou_min: float = 0.5
) -> Optional[float]:
    """Share of the category's boxes NOT confidently taken for another category."""
    part = misdetect_partition(gt, preds, category, tau, iou_min)
    if part.total == 0:
        return None
    return 1.0 - part.misdetected / part.total


def final_undistinguishable_rate(
    gt: Sequence[Annotation], preds: Sequence[Prediction], category: int, tau: float, iou_min: float = 0.5
) -> Optional[float]:
    part = misdetect_partition(gt, preds, category, tau, iou_min)
    if part.total == 0:
        return None
    return (part.misdetected + part.unmatched) / part.total


def confidence_report(preds: Sequence[Prediction], category: int, bin_width: float = 0.1):
    """Histogram of the category's confidences; returns ``(edges, counts)``.

    Bins are ``[k*w, (k+1)*w)`` with the last one closed at 1.
    """
    if not 0.0 < bin_width <= 1.0:
        raise ValueError("bin_width must lie in (0, 1]")
    n = max(1, math.ceil(1.0 / bin_width - 1e-9))
    edges = [min(1.0, round(k * bin_width, 12)) for k in range(n + 1)]
    counts = [0] * n
    for p in preds:
        if p.category_id == category:
            counts[min(int(math.floor(p.confidence / bin_width + 1e-9)), n - 1)] += 1
    return edges, counts


def confidence_csv(edges: Sequence[float], counts: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    for lo, hi, c in zip(edges, edges[1:], counts):
        w.writerow([f"{lo:g}", f"{hi:g}", c])
    return buf.getvalue()


# -- reports ---------------------------------------------------------------


@dataclass(frozen=True)
class CategoryMetrics:
    category: int
    images: int
    gt_boxes: int
    ap50: Optional[float]
    ap5095: Optional[float]
    pass_rate: Optional[float]
    misdetect_rate: dict[float, Optional[float]] = field(default_factory=dict)
    final_undistinguishable_rate: dict[float, Optional[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class MetricsReport:
    categories: tuple[CategoryMetrics, ...]
    iou_min: float
    conf_min: float
    taus: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "iou_min": self.iou_min,
            "conf_min": self.conf_min,
            "taus": list(self.taus),
            "categories": [
                {
                    "category": m.category,
                    "images": m.images,
                    "gt_boxes": m.gt_boxes,
                    "ap50": m.ap50,
                    "ap5095": m.ap5095,
                    "pass_rate": m.pass_rate,
                    "misdetect_rate": {f"{t:g}": v for t, v in m.misdetect_rate.items()},
                    "final_undistinguishable_rate": {f"{t:g}": v for t, v in m.final_undistinguishable_rate.items()},
                }
                for m in self.categories
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["category", "images", "gt_boxes", "ap50", "ap5095", "pass_rate"]
        head += [f"misdetect_rate@{t:g}" for t in self.taus]
        head += [f"final_undistinguishable_rate@{t:g}" for t in self.taus]
        w.writerow(head)
        cell = lambda v: "" if v is None else f"{v:.6f}"
        for m in self.categories:
            row = [m.category, m.images, m.gt_boxes, cell(m.ap50), cell(m.ap5095), cell(m.pass_rate)]
            row += [cell(m.misdetect_rate[t]) for t in self.taus]
            row += [cell(m.final_undistinguishable_rate[t]) for t in self.taus]
            w.writerow(row)
        return buf.getvalue()


def evaluate(
    gt: Sequence[Annotation],
    preds: Sequence[Prediction],
    categories: Iterable[int],
    taus: Sequence[float] = (0.9, 0.95),
    iou_min: float = 0.5,
    conf_min: float = 0.25,
) -> MetricsReport:
    out = []
    for c in sorted(set(categories)):
        mine = [a for a in gt if a.category_id == c]
        out.append(
            CategoryMetrics(
                c,
                len({a.image_id for a in mine}),
                len(mine),
                average_precision(gt, preds, c, 0.5),
                ap_coco(gt, preds, c),
                pass_rate(gt, preds, c, iou_min, conf_min),
                {t: misdetect_rate(gt, preds, c, t, iou_min) for t in taus},
                {t: final_undistinguishable_rate(gt, preds, c, t, iou_min) for t in taus},
            )
        )
    return MetricsReport(tuple(out), iou_min, conf_min, tuple(taus))


def read_predictions(path: str | Path) -> list[Prediction]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            x, y, w, h = (float(v) for v in doc["bbox"])
            out.append(Prediction(int(doc["image_id"]), int(doc["category_id"]), Rect(x, y, w, h), float(doc["score"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad prediction record: {exc}", line=n, file_name=str(path)) from exc
    return out


def write_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(p.to_json(), sort_keys=True) + "\n" for p in preds))
