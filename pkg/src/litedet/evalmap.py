"""PASCAL-style detection evaluation: greedy per-image matching,
per-class average precision as sum_k P(k)*delta_r(k), and mAP.

An optional 11-point interpolated AP (the VOC2007 convention) is
available behind a flag; the plain running sum is the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from litedet.detect import Detection, iou


class ZeroGroundTruth(ValueError):
    pass


@dataclass
class MatchResult:
    tp_flags: list          # per detection, sorted by score desc: True=TP
    scores: list            # same order
    gt_matched: list        # per ground truth


@dataclass
class ClassStats:
    n_gt: int = 0
    n_det: int = 0
    n_tp: int = 0
    ap: float = 0.0


@dataclass
class ApReport:
    per_class: dict = field(default_factory=dict)  # class_id -> ClassStats
    map: float = 0.0

    def to_dict(self):
        return {
            "mAP": self.map,
            "classes": {str(c): {"ap": s.ap, "gts": s.n_gt,
                                 "dets": s.n_det, "tps": s.n_tp}
                        for c, s in sorted(self.per_class.items())},
        }


def match_detections(dets: list[Detection], gts, iou_thresh=0.5) -> MatchResult:
    """Greedy matching within one class and one image.

    Detections are taken in descending score order (ties by input
    index); each is a TP iff its best-IOU unmatched gt clears the
    threshold, and that gt is then consumed.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    matched = [False] * len(gts)
    tp_flags = []
    scores = []
    for i in order:
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gts):
            if matched[j]:
                continue
            v = iou(dets[i].bbox, gt.bbox)
            if v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0 and best_iou >= iou_thresh:
            matched[best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)
        scores.append(dets[i].score)
    return MatchResult(tp_flags=tp_flags, scores=scores, gt_matched=matched)


def average_precision(flags, n_gt, interp11=False) -> float:
    """AP over a ranked TP/FP list: sum of P(k) * delta r(k).

    With interp11, the 11-point interpolated variant instead averages
    max-precision-at-recall over recall levels 0, 0.1, ..., 1.
    """
    if n_gt < 1:
        raise ZeroGroundTruth("AP undefined without ground truths")
    tps = 0
    precisions = []
    recalls = []
    ap = 0.0
    for k, flag in enumerate(flags, start=1):
        if flag:
            tps += 1
            ap += (tps / k) * (1.0 / n_gt)
        precisions.append(tps / k)
        recalls.append(tps / n_gt)
    if not interp11:
        return ap
    total = 0.0
    for level in np.linspace(0, 1, 11):
        candidates = [p for p, r in zip(precisions, recalls) if r >= level - 1e-12]
        total += max(candidates, default=0.0)
    return total / 11.0


def mean_ap(per_image_dets, per_image_gts, classes, iou_thresh=0.5,
            interp11=False) -> ApReport:
    """Pool detections per class across images, match per image, rank
    globally by score, and average AP over classes with >= 1 gt."""
    if len(per_image_dets) != len(per_image_gts):
        raise ValueError("detections/ground-truths image count mismatch")
    report = ApReport()
    aps = []
    for c in range(classes):
        ranked = []  # (score, input order, tp flag)
        n_gt = 0
        n_det = 0
        order_counter = 0
        for dets, gts in zip(per_image_dets, per_image_gts):
            cls_dets = [d for d in dets if d.class_id == c]
            cls_gts = [g for g in gts if g.class_id == c]
            n_gt += len(cls_gts)
            n_det += len(cls_dets)
            result = match_detections(cls_dets, cls_gts, iou_thresh)
            for score, flag in zip(result.scores, result.tp_flags):
                ranked.append((score, order_counter, flag))
                order_counter += 1
        if n_gt == 0:
            continue
        ranked.sort(key=lambda t: (-t[0], t[1]))
        flags = [flag for _, _, flag in ranked]
        stats = ClassStats(n_gt=n_gt, n_det=n_det, n_tp=sum(flags),
                           ap=average_precision(flags, n_gt, interp11))
        report.per_class[c] = stats
        aps.append(stats.ap)
    report.map = float(np.mean(aps)) if aps else 0.0
    return report
