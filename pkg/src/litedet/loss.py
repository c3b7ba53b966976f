"""Detection loss over decoded region-head boxes, responsibility
assignment, and the analytic gradient back to the raw head tensor.

The loss is a sum of squared errors: coordinate terms (weighted by
lambda_coord, box sizes compared under square roots), confidence terms
where the with-object target is the live IOU between the predicted and
ground-truth box, a no-object confidence term weighted by lambda_noobj,
and one classification term per object cell using the responsible
anchor's class distribution.

Gradients chain through the decode (sigmoid/exp/softmax) and through the
IOU confidence target; the anchor assignment is held fixed at its
forward-pass value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from litedet.detect import BBox, decode_grid, iou
from litedet.kernels import ShapeMismatch


class UnsupportedLayer(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    bbox: BBox

    def __post_init__(self):
        b = self.bbox
        if not (0 < b.w <= 1 and 0 < b.h <= 1):
            raise ValueError(f"box size {b.w}x{b.h} outside (0, 1]")
        if not (0 <= b.cx <= 1 and 0 <= b.cy <= 1):
            raise ValueError(f"box center ({b.cx},{b.cy}) outside [0, 1]")
        if self.class_id < 0:
            raise ValueError("negative class_id")


@dataclass
class LossConfig:
    s: int
    num_anchors: int
    classes: int
    lambda_coord: float = 5.0
    lambda_noobj: float = 0.5

    def __post_init__(self):
        if self.lambda_coord <= 0 or self.lambda_noobj <= 0:
            raise ValueError("loss weights must be positive")


@dataclass
class LossBreakdown:
    coord: float
    conf_obj: float
    conf_noobj: float
    classification: float

    @property
    def total(self) -> float:
        return self.coord + self.conf_obj + self.conf_noobj + self.classification


@dataclass
class Assignment:
    """slots[i] is the (row, col, anchor) responsible for gts[i], or None
    if that gt overflowed a full cell and was dropped."""
    slots: list = field(default_factory=list)
    dropped: list = field(default_factory=list)  # indices into gts

    def responsible(self) -> dict:
        """(row, col, anchor) -> gt index, skipping dropped gts."""
        return {slot: i for i, slot in enumerate(self.slots) if slot is not None}


def _grid_bbox(grid, row, col, a) -> BBox:
    return BBox(float(grid["bx"][row, col, a]), float(grid["by"][row, col, a]),
                float(grid["bw"][row, col, a]), float(grid["bh"][row, col, a]))


def assign_responsibility(grid, gts, s: int, num_anchors: int) -> Assignment:
    """Map each ground truth to (cell row, cell col, anchor).

    The cell is the one containing the box center; within it, the anchor
    whose predicted box has max IOU with the gt (ties -> lowest index).
    If that slot is taken by an earlier gt the next-best free anchor is
    used; a gt with no free anchor left is dropped and recorded.
    """
    assignment = Assignment()
    taken = set()
    for i, gt in enumerate(gts):
        row = min(int(gt.bbox.cy * s), s - 1)
        col = min(int(gt.bbox.cx * s), s - 1)
        ious = [iou(_grid_bbox(grid, row, col, a), gt.bbox)
                for a in range(num_anchors)]
        ranked = sorted(range(num_anchors), key=lambda a: (-ious[a], a))
        slot = None
        for a in ranked:
            if (row, col, a) not in taken:
                slot = (row, col, a)
                taken.add(slot)
                break
        assignment.slots.append(slot)
        if slot is None:
            assignment.dropped.append(i)
    return assignment


def _iou_with_grad(p: BBox, g: BBox):
    """IOU and its gradient wrt the predicted (cx, cy, w, h)."""
    px1, px2 = p.cx - p.w / 2, p.cx + p.w / 2
    py1, py2 = p.cy - p.h / 2, p.cy + p.h / 2
    gx1, gx2 = g.cx - g.w / 2, g.cx + g.w / 2
    gy1, gy2 = g.cy - g.h / 2, g.cy + g.h / 2
    iw = min(px2, gx2) - max(px1, gx1)
    ih = min(py2, gy2) - max(py1, gy1)
    if iw <= 0 or ih <= 0:
        return 0.0, (0.0, 0.0, 0.0, 0.0)
    inter = iw * ih
    union = p.w * p.h + g.w * g.h - inter
    val = inter / union

    a1 = 1.0 if px1 > gx1 else 0.0  # left edge active
    a2 = 1.0 if px2 < gx2 else 0.0  # right edge active
    b1 = 1.0 if py1 > gy1 else 0.0
    b2 = 1.0 if py2 < gy2 else 0.0
    diw_dcx, diw_dw = a2 - a1, 0.5 * (a1 + a2)
    dih_dcy, dih_dh = b2 - b1, 0.5 * (b1 + b2)
    dinter = (ih * diw_dcx, iw * dih_dcy, ih * diw_dw, iw * dih_dh)
    darea = (0.0, 0.0, p.h, p.w)
    grads = tuple((di * union - inter * (da - di)) / (union * union)
                  for di, da in zip(dinter, darea))
    return val, grads


def _cell_class_reps(assignment, gts):
    """One (row, col, anchor, gt index) per object cell: the responsible
    anchor of the lowest-index gt in that cell."""
    reps = {}
    for i, slot in enumerate(assignment.slots):
        if slot is None:
            continue
        cell = (slot[0], slot[1])
        if cell not in reps:
            reps[cell] = (slot[2], i)
    return reps


def yolo_loss(grid, gts, cfg: LossConfig, assignment: Assignment | None = None):
    """Evaluate the loss over a decoded grid. Returns (LossBreakdown,
    Assignment)."""
    if grid["obj"].shape != (cfg.s, cfg.s, cfg.num_anchors):
        raise ShapeMismatch(f"grid {grid['obj'].shape} vs config "
                            f"({cfg.s},{cfg.s},{cfg.num_anchors})")
    if assignment is None:
        assignment = assign_responsibility(grid, gts, cfg.s, cfg.num_anchors)
    responsible = assignment.responsible()

    coord = 0.0
    conf_obj = 0.0
    for (row, col, a), i in responsible.items():
        gt = gts[i].bbox
        p = _grid_bbox(grid, row, col, a)
        coord += cfg.lambda_coord * ((p.cx - gt.cx) ** 2 + (p.cy - gt.cy) ** 2)
        coord += cfg.lambda_coord * ((math.sqrt(p.w) - math.sqrt(gt.w)) ** 2
                                     + (math.sqrt(p.h) - math.sqrt(gt.h)) ** 2)
        c_hat, _ = _iou_with_grad(p, gt)
        conf_obj += (float(grid["obj"][row, col, a]) - c_hat) ** 2

    noobj_sq = grid["obj"].astype(np.float64) ** 2
    total_sq = float(noobj_sq.sum())
    resp_sq = sum(float(noobj_sq[slot]) for slot in responsible)
    conf_noobj = cfg.lambda_noobj * (total_sq - resp_sq)

    classification = 0.0
    for (row, col), (a, i) in _cell_class_reps(assignment, gts).items():
        target = np.zeros(cfg.classes)
        target[gts[i].class_id] = 1.0
        probs = grid["probs"][row, col, a].astype(np.float64)
        classification += float(((probs - target) ** 2).sum())

    return LossBreakdown(coord=coord, conf_obj=conf_obj, conf_noobj=conf_noobj,
                         classification=classification), assignment


def loss_grad_wrt_head(head: np.ndarray, anchors, classes: int, gts,
                       cfg: LossConfig, assignment: Assignment | None = None):
    """Loss plus its analytic gradient wrt the raw head tensor.

    Returns (LossBreakdown, dhead, Assignment). The assignment is held
    fixed; everything else (including the IOU confidence target) is
    differentiated.
    """
    grid = decode_grid(head.astype(np.float64), anchors, classes)
    breakdown, assignment = yolo_loss(grid, gts, cfg, assignment)
    responsible = assignment.responsible()
    s = cfg.s
    num = cfg.num_anchors

    dbx = np.zeros((s, s, num))
    dby = np.zeros_like(dbx)
    dbw = np.zeros_like(dbx)
    dbh = np.zeros_like(dbx)
    dprobs = np.zeros((s, s, num, classes))

    # no-object confidence everywhere, then overwrite responsible slots
    dobj = 2.0 * cfg.lambda_noobj * grid["obj"].astype(np.float64)
    for (row, col, a), i in responsible.items():
        gt = gts[i].bbox
        p = _grid_bbox(grid, row, col, a)
        dbx[row, col, a] += 2.0 * cfg.lambda_coord * (p.cx - gt.cx)
        dby[row, col, a] += 2.0 * cfg.lambda_coord * (p.cy - gt.cy)
        # box sizes are exp-decoded so positive, but can underflow to 0 in
        # single precision; floor the divisor to keep the gradient finite
        sw = max(math.sqrt(p.w), 1e-12)
        sh = max(math.sqrt(p.h), 1e-12)
        dbw[row, col, a] += cfg.lambda_coord * ((sw - math.sqrt(gt.w)) / sw)
        dbh[row, col, a] += cfg.lambda_coord * ((sh - math.sqrt(gt.h)) / sh)
        c_hat, (dio_dcx, dio_dcy, dio_dw, dio_dh) = _iou_with_grad(p, gt)
        resid = 2.0 * (float(grid["obj"][row, col, a]) - c_hat)
        dobj[row, col, a] = resid
        dbx[row, col, a] -= resid * dio_dcx
        dby[row, col, a] -= resid * dio_dcy
        dbw[row, col, a] -= resid * dio_dw
        dbh[row, col, a] -= resid * dio_dh

    for (row, col), (a, i) in _cell_class_reps(assignment, gts).items():
        target = np.zeros(classes)
        target[gts[i].class_id] = 1.0
        dprobs[row, col, a] = 2.0 * (grid["probs"][row, col, a] - target)

    # chain back through the decode to the raw head channels
    per = 5 + classes
    raw = head.astype(np.float64).reshape(num, per, s, s).transpose(2, 3, 0, 1)
    sig_x = 1.0 / (1.0 + np.exp(-raw[..., 0]))
    sig_y = 1.0 / (1.0 + np.exp(-raw[..., 1]))
    obj = grid["obj"].astype(np.float64)
    probs = grid["probs"].astype(np.float64)

    draw = np.zeros((s, s, num, per))
    draw[..., 0] = dbx * sig_x * (1 - sig_x) / s
    draw[..., 1] = dby * sig_y * (1 - sig_y) / s
    draw[..., 2] = dbw * grid["bw"].astype(np.float64)  # d(bw)/d(tw) = bw
    draw[..., 3] = dbh * grid["bh"].astype(np.float64)
    draw[..., 4] = dobj * obj * (1 - obj)
    dot = (dprobs * probs).sum(axis=-1, keepdims=True)
    draw[..., 5:] = probs * (dprobs - dot)

    dhead = draw.transpose(2, 3, 0, 1).reshape(num * per, s, s)
    return breakdown, dhead.astype(head.dtype), assignment
