"""Region head decoding and IOU-based non-maximum suppression.

Head layout: channel a*(coords+1+classes) + j holds, for anchor a,
j=0..3 the raw box offsets (tx,ty,tw,th), j=4 the objectness logit, and
j>=5 the class logits. For cell (row,col):

    cx = (col + sigmoid(tx)) / S      w = anchor_w * exp(tw) / S
    cy = (row + sigmoid(ty)) / S      h = anchor_h * exp(th) / S

objectness = sigmoid(to), class probabilities = softmax(logits).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from litedet.kernels import ShapeMismatch


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box size {self.w}x{self.h}")


@dataclass(eq=False)  # class_probs is an ndarray; identity comparison only
class Detection:
    bbox: BBox
    objectness: float
    class_probs: np.ndarray
    class_id: int
    score: float


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def iou(a: BBox, b: BBox) -> float:
    """Intersection area over union area; 0 when the union is empty."""
    ax1, ax2 = a.cx - a.w / 2, a.cx + a.w / 2
    ay1, ay2 = a.cy - a.h / 2, a.cy + a.h / 2
    bx1, bx2 = b.cx - b.w / 2, b.cx + b.w / 2
    by1, by2 = b.cy - b.h / 2, b.cy + b.h / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    # corner rounding can push inter a hair past union for (near-)equal boxes
    return min(1.0, inter / union)


def decode_grid(head: np.ndarray, anchors, classes: int):
    """Decode the full head into grid arrays (no thresholding).

    Returns dict with bx,by,bw,bh,obj of shape (S,S,A) and probs of
    shape (S,S,A,classes), indexed [row, col, anchor].
    """
    num = len(anchors)
    per = 5 + classes
    if head.ndim != 3 or head.shape[0] != num * per:
        raise ShapeMismatch(f"head {head.shape}, expected ({num * per}, S, S)")
    if head.shape[1] != head.shape[2]:
        raise ShapeMismatch("head grid must be square")
    s = head.shape[1]
    raw = head.reshape(num, per, s, s).transpose(2, 3, 0, 1)  # (row,col,a,per)
    cols = np.arange(s, dtype=head.dtype)
    rows = np.arange(s, dtype=head.dtype)
    anchors_arr = np.asarray(anchors, dtype=head.dtype)  # (A, 2)
    return {
        "bx": (cols[None, :, None] + sigmoid(raw[..., 0])) / s,
        "by": (rows[:, None, None] + sigmoid(raw[..., 1])) / s,
        "bw": anchors_arr[:, 0] * np.exp(raw[..., 2]) / s,
        "bh": anchors_arr[:, 1] * np.exp(raw[..., 3]) / s,
        "obj": sigmoid(raw[..., 4]),
        "probs": softmax(raw[..., 5:], axis=-1),
    }


def decode_region(head: np.ndarray, anchors, classes: int,
                  conf_thresh: float = 0.25) -> list[Detection]:
    """Decode the head into detections, dropping score < conf_thresh."""
    g = decode_grid(head, anchors, classes)
    s = head.shape[1]
    dets = []
    for row in range(s):
        for col in range(s):
            for a in range(len(anchors)):
                probs = g["probs"][row, col, a]
                cid = int(np.argmax(probs))
                obj = float(g["obj"][row, col, a])
                score = obj * float(probs[cid])
                if score < conf_thresh:
                    continue
                dets.append(Detection(
                    bbox=BBox(float(g["bx"][row, col, a]),
                              float(g["by"][row, col, a]),
                              float(g["bw"][row, col, a]),
                              float(g["bh"][row, col, a])),
                    objectness=obj,
                    class_probs=probs.copy(),
                    class_id=cid,
                    score=score,
                ))
    return dets


def nms(dets: list[Detection], iou_thresh: float = 0.45) -> list[Detection]:
    """Greedy per-class suppression; kept boxes ordered by score desc,
    ties by input index. Cross-class suppression is off."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept_idx = []
    for i in order:
        suppressed = False
        for j in kept_idx:
            if (dets[j].class_id == dets[i].class_id
                    and iou(dets[j].bbox, dets[i].bbox) > iou_thresh):
                suppressed = True
                break
        if not suppressed:
            kept_idx.append(i)
    return [dets[i] for i in kept_idx]
