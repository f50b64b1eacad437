"""COCO-protocol box AP: AP@[.50:.95], 101-point interpolation, maxDets 100, area "all".

Crowd ground truth acts as an ignore region: a detection that matches no
regular box but covers a crowd box (intersection over *detection* area) at
the threshold is dropped from the ranking instead of counted as a false
positive.

Two choices are fixed so results are reproducible bit for bit:

* score ties are broken by position in the detection input (stable sort);
* when several unmatched boxes share the best IoU, the first one in file
  order is taken.

Thresholds are the doubles nearest k/100, and "recall >= r" on the 101-point
grid is decided in integers (``100 * tp >= r_index * num_gt``) rather than
against a floating linspace.
"""

from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from cocoft.coco import Annotation, BBox, Dataset, Source, _decode_json, _read_text, parse_bbox
from cocoft.errors import DataError, IntegrityError, SchemaError

IOU_THRESHOLDS = tuple(k / 100 for k in range(50, 100, 5))
RECALL_POINTS = 101
MAX_DETS = 100


class Outcome(enum.Enum):
    TP = "TP"
    FP = "FP"
    IGNORED = "IGNORED"


@dataclass(frozen=True)
class Detection:
    image_id: int
    category_id: int
    bbox: BBox
    score: float


def _check_box(b: BBox):
    if b.is_degenerate:
        raise ValueError(f"degenerate box {b.to_list()}: width and height must be positive")


def _intersection(a: BBox, b: BBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BBox, b: BBox) -> float:
    _check_box(a)
    _check_box(b)
    inter = _intersection(a, b)
    return inter / (a.w * a.h + b.w * b.h - inter)


def crowd_overlap(det: BBox, crowd: BBox) -> float:
    """Intersection over the detection's own area."""
    _check_box(det)
    _check_box(crowd)
    return _intersection(det, crowd) / (det.w * det.h)


def _match(ious, crowd_ov, threshold):
    """Greedy matching on precomputed overlaps.

    ``ious[d][g]`` is against regular boxes, ``crowd_ov[d][c]`` against crowd
    boxes; detections are already in rank order.
    """
    matched = set()
    outcomes = []
    for d, row in enumerate(ious):
        best = -1
        best_iou = threshold
        for g, v in enumerate(row):
            if g in matched:
                continue
            if (best < 0 and v >= best_iou) or v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            matched.add(best)
            outcomes.append(Outcome.TP)
        elif any(v >= threshold for v in crowd_ov[d]):
            outcomes.append(Outcome.IGNORED)
        else:
            outcomes.append(Outcome.FP)
    return outcomes, matched


def _rank(dets: Sequence[Detection]) -> list:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_category(gt: Sequence[Annotation], dets: Sequence[Detection], threshold: float):
    """Match one image's detections of one category against its ground truth.

    ``dets`` are ranked by descending score here (stable), so callers may pass
    them in any order; outcomes are returned in that ranked order. Returns
    ``(outcomes, matched)`` where ``matched`` holds the ids of the regular
    ground-truth annotations that were claimed.
    """
    regular = [a for a in gt if not a.iscrowd]
    crowd = [a for a in gt if a.iscrowd]
    ranked = [dets[i] for i in _rank(dets)]
    ious = [[iou(d.bbox, a.bbox) for a in regular] for d in ranked]
    crowd_ov = [[crowd_overlap(d.bbox, a.bbox) for a in crowd] for d in ranked]
    outcomes, matched = _match(ious, crowd_ov, threshold)
    return outcomes, {regular[g].id for g in matched}


def average_precision(outcomes: Iterable[Outcome], gt_count: int) -> Optional[float]:
    """101-point interpolated AP over a ranked TP/FP list; None when there is no ground truth."""
    if gt_count <= 0:
        return None
    tps, precision = [], []
    tp = fp = 0
    for o in outcomes:
        if o is Outcome.TP:
            tp += 1
        elif o is Outcome.FP:
            fp += 1
        else:
            raise ValueError("ignored detections must be removed before computing AP")
        tps.append(tp)
        precision.append(tp / (tp + fp))
    for i in range(len(precision) - 2, -1, -1):
        if precision[i + 1] > precision[i]:
            precision[i] = precision[i + 1]
    total = 0.0
    j = 0
    for r in range(RECALL_POINTS):
        while j < len(tps) and 100 * tps[j] < r * gt_count:
            j += 1
        if j == len(tps):
            break
        total += precision[j]
    return total / RECALL_POINTS


@dataclass
class EvalReport:
    thresholds: tuple
    ap_per_category_per_threshold: dict  # (category id, threshold) -> AP or None
    ap_per_category: dict  # category id -> AP or None
    mean_ap: Optional[float]
    counts: dict  # category id -> {"gt", "crowd", "detections"}
    names: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        cats = []
        for cat_id in sorted(self.ap_per_category):
            cats.append({
                "id": cat_id,
                "name": self.names.get(cat_id, ""),
                "ap": self.ap_per_category[cat_id],
                "ap_per_threshold": [self.ap_per_category_per_threshold[cat_id, t] for t in self.thresholds],
                "num_gt": self.counts[cat_id]["gt"],
                "num_crowd": self.counts[cat_id]["crowd"],
                "num_detections": self.counts[cat_id]["detections"],
            })
        return {
            "metric": "AP@[IoU=0.50:0.95]",
            "iou_thresholds": list(self.thresholds),
            "mean_ap": self.mean_ap,
            "categories": cats,
        }

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2) + "\n").encode("utf-8")

    def summary_table(self) -> str:
        def fmt(v):
            return "  n/a" if v is None else f"{v:.3f}"

        i50 = self.thresholds.index(0.5) if 0.5 in self.thresholds else None
        i75 = self.thresholds.index(0.75) if 0.75 in self.thresholds else None
        width = max([len("category")] + [len(n) for n in self.names.values()])
        lines = [f"{'id':>4}  {'category':<{width}}  {'AP':>5}  {'AP50':>5}  {'AP75':>5}  {'#gt':>6}  {'#det':>6}"]
        for cat_id in sorted(self.ap_per_category):
            per = [self.ap_per_category_per_threshold[cat_id, t] for t in self.thresholds]
            c = self.counts[cat_id]
            lines.append(
                f"{cat_id:>4}  {self.names.get(cat_id, ''):<{width}}  {fmt(self.ap_per_category[cat_id]):>5}  "
                f"{fmt(per[i50] if i50 is not None else None):>5}  {fmt(per[i75] if i75 is not None else None):>5}  "
                f"{c['gt']:>6}  {c['detections']:>6}"
            )
        lines.append(f"mean AP@[.50:.95] = {fmt(self.mean_ap)}")
        return "\n".join(lines) + "\n"


def parse_detections(source: Source) -> list:
    """Read a COCO results file: a JSON array of {image_id, category_id, bbox, score}."""
    raw = _decode_json(_read_text(source))
    if not isinstance(raw, list):
        raise SchemaError("detections file must contain a JSON array")
    dets = []
    for i, rec in enumerate(raw):
        where = f"detections[{i}]"
        if not isinstance(rec, dict):
            raise SchemaError(f"{where} must be an object")
        for key in ("image_id", "category_id", "bbox", "score"):
            if key not in rec:
                raise SchemaError(f"{where} is missing required key {key!r}")
        ids = []
        for key in ("image_id", "category_id"):
            v = rec[key]
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            if isinstance(v, bool) or not isinstance(v, int):
                raise SchemaError(f"{where}.{key} must be an integer, got {v!r}")
            ids.append(v)
        bbox = parse_bbox(rec["bbox"], f"{where}.bbox")
        if bbox.is_degenerate:
            raise SchemaError(f"{where}.bbox must have positive width and height, got {bbox.to_list()}")
        score = rec["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise SchemaError(f"{where}.score must be a finite number, got {score!r}")
        dets.append(Detection(ids[0], ids[1], bbox, float(score)))
    return dets


def evaluate(gt: Dataset, dets: Sequence[Detection], m=None, thresholds=IOU_THRESHOLDS,
             max_dets: int = MAX_DETS) -> EvalReport:
    """Score detections against ``gt`` for the categories in ``m`` (all categories if None).

    Every detection must name an image and a category present in ``gt``;
    detections of categories outside ``m`` are otherwise ignored. Ground
    truth boxes of scored categories must be non-degenerate.
    """
    image_ids = {im.id for im in gt.images}
    cat_ids = {c.id for c in gt.categories}
    bad = [i for i, d in enumerate(dets) if d.image_id not in image_ids or d.category_id not in cat_ids]
    if bad:
        missing_images = sorted({dets[i].image_id for i in bad} - image_ids)
        missing_cats = sorted({dets[i].category_id for i in bad} - cat_ids)
        what = []
        if missing_images:
            what.append(f"unknown image_id {', '.join(map(str, missing_images[:20]))}")
        if missing_cats:
            what.append(f"unknown category_id {', '.join(map(str, missing_cats[:20]))}")
        raise IntegrityError(
            f"{len(bad)} detection(s) reference {' and '.join(what)} "
            f"(first at index {bad[0]})",
            ids=bad,
        )
    for i, d in enumerate(dets):
        if d.bbox.is_degenerate or not math.isfinite(d.score):
            raise DataError(f"detection at index {i} has a degenerate box or non-finite score")
    selected = sorted(cat_ids) if m is None else list(m.selected_ids)
    scored = set(selected)

    gt_groups = defaultdict(list)
    for a in gt.annotations:
        if a.category_id in scored:
            if a.bbox.is_degenerate:
                raise DataError(f"annotation {a.id} has a degenerate bbox {a.bbox.to_list()}; cannot evaluate")
            gt_groups[a.image_id, a.category_id].append(a)
    det_groups = defaultdict(list)
    for i, d in enumerate(dets):
        if d.category_id in scored:
            det_groups[d.image_id, d.category_id].append(i)

    # per category: list of (score, input index, outcomes per threshold)
    pooled = defaultdict(list)
    counts = {c: {"gt": 0, "crowd": 0, "detections": 0} for c in selected}
    for key in sorted(set(gt_groups) | set(det_groups)):
        cat = key[1]
        anns = gt_groups.get(key, [])
        regular = [a for a in anns if not a.iscrowd]
        crowd = [a for a in anns if a.iscrowd]
        counts[cat]["gt"] += len(regular)
        counts[cat]["crowd"] += len(crowd)
        idx = sorted(det_groups.get(key, []), key=lambda i: -dets[i].score)[:max_dets]
        counts[cat]["detections"] += len(idx)
        if not idx:
            continue
        ious = [[iou(dets[i].bbox, a.bbox) for a in regular] for i in idx]
        crowd_ov = [[crowd_overlap(dets[i].bbox, a.bbox) for a in crowd] for i in idx]
        per_t = [_match(ious, crowd_ov, t)[0] for t in thresholds]
        for n, i in enumerate(idx):
            pooled[cat].append((dets[i].score, i, [o[n] for o in per_t]))

    per_threshold = {}
    per_category = {}
    for cat in selected:
        ranked = sorted(pooled[cat], key=lambda e: (-e[0], e[1]))
        values = []
        for ti, t in enumerate(thresholds):
            outcomes = [e[2][ti] for e in ranked if e[2][ti] is not Outcome.IGNORED]
            ap = average_precision(outcomes, counts[cat]["gt"])
            per_threshold[cat, t] = ap
            if ap is not None:
                values.append(ap)
        per_category[cat] = sum(values) / len(values) if values else None
    defined = [v for v in per_category.values() if v is not None]
    names = {c.id: c.name for c in gt.categories if c.id in scored}
    return EvalReport(
        thresholds=tuple(thresholds),
        ap_per_category_per_threshold=per_threshold,
        ap_per_category=per_category,
        mean_ap=sum(defined) / len(defined) if defined else None,
        counts=counts,
        names=names,
    )
