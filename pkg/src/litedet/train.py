"""Desk-scale training: backprop through the tensor kernels, SGD with
momentum, a synthetic-shapes dataset generator, and the toy trainer.

Training supports only BN-free networks; batch-normalized layers raise
UnsupportedLayer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from litedet import kernels
from litedet.darknet import ConvWeights, WeightsBlob
from litedet.detect import BBox, iou
from litedet.inference import CompiledNetwork
from litedet.ir import ConvLayer, MaxPoolLayer, NetworkSpec, RegionLayer, validate
from litedet.loss import (
    GroundTruthBox,
    LossConfig,
    UnsupportedLayer,
    loss_grad_wrt_head,
)


class Divergence(RuntimeError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"loss became non-finite at iteration {iteration}")


def forward_with_cache(net: CompiledNetwork, x: np.ndarray):
    """Forward pass retaining per-layer state for backprop.

    Returns (head, caches); caches[i] holds what layer i's backward
    needs (conv input + pre-activation, pool argmax + input shape).
    """
    x = np.ascontiguousarray(x, dtype=net.dtype)
    caches = []
    conv_idx = 0
    for layer in net.spec.layers:
        if isinstance(layer, ConvLayer):
            if layer.batch_normalize:
                raise UnsupportedLayer("training requires BN-free networks")
            p = net.conv_params[conv_idx]
            conv_idx += 1
            pre = kernels.conv2d(x, p["kernel"], bias=p["bias"],
                                 stride=layer.stride, pad=layer.pad)
            caches.append({"layer": layer, "input": x, "pre": pre,
                           "kernel": p["kernel"]})
            x = kernels.activate(pre, layer.activation)
        elif isinstance(layer, MaxPoolLayer):
            out, argmax = kernels.maxpool2d(x, layer.size, layer.stride, layer.pad)
            caches.append({"layer": layer, "argmax": argmax, "in_shape": x.shape})
            x = out
        elif isinstance(layer, RegionLayer):
            caches.append({"layer": layer})
    return x, caches


def backward(caches, dhead):
    """Backprop dhead through the cached layers.

    Returns per-conv-layer (dkernel, dbias) in forward order.
    """
    grads = []
    d = dhead
    for cache in reversed(caches):
        layer = cache["layer"]
        if isinstance(layer, ConvLayer):
            d = kernels.activate_backward(d, cache["pre"], layer.activation)
            d, dk, db = kernels.conv2d_backward(d, cache["input"], cache["kernel"],
                                                stride=layer.stride, pad=layer.pad)
            grads.append((dk, db))
        elif isinstance(layer, MaxPoolLayer):
            d = kernels.maxpool2d_backward(d, cache["argmax"], cache["in_shape"])
    grads.reverse()
    return grads


def loss_gradient(net: CompiledNetwork, image: np.ndarray, gts,
                  cfg: LossConfig | None = None):
    """Analytic gradient of loss(forward(image)) for every conv weight
    and bias, with the responsibility assignment fixed at its
    forward-pass value.

    Returns (LossBreakdown, grads) where grads is a per-conv list of
    (dkernel, dbias).
    """
    region = net.region_layer()
    if region is None:
        raise ValueError("network has no region layer")
    head, caches = forward_with_cache(net, image)
    if cfg is None:
        cfg = LossConfig(s=head.shape[1], num_anchors=region.num_anchors,
                         classes=region.classes)
    breakdown, dhead, _ = loss_grad_wrt_head(
        head, region.anchors, region.classes, gts, cfg)
    return breakdown, backward(caches, dhead.astype(net.dtype))


def sgd_step(params, grads, lr, momentum, velocity):
    """In-place v <- momentum*v - lr*g; w <- w + v over parallel lists."""
    if len(params) != len(grads) or len(params) != len(velocity):
        raise kernels.ShapeMismatch("params/grads/velocity length mismatch")
    for w, g, v in zip(params, grads, velocity):
        if w.shape != g.shape or w.shape != v.shape:
            raise kernels.ShapeMismatch(f"{w.shape} vs {g.shape} vs {v.shape}")
        v *= momentum
        v -= lr * g.astype(v.dtype)
        w += v


# ---------------------------------------------------------------------------
# synthetic shapes dataset

SHAPE_COLORS = (  # class -> base RGB in [0,1]
    (0.90, 0.20, 0.20),  # 0: square
    (0.20, 0.85, 0.25),  # 1: circle
    (0.25, 0.35, 0.90),  # 2: triangle
)


def _rasterize(img, class_id, cx, cy, w, h, color):
    side = img.shape[1]
    ys = (np.arange(side) + 0.5) / side
    xs = (np.arange(side) + 0.5) / side
    yy = ys[:, None]
    xx = xs[None, :]
    x1, x2 = cx - w / 2, cx + w / 2
    y1, y2 = cy - h / 2, cy + h / 2
    if class_id == 0:  # filled square
        mask = (xx >= x1) & (xx <= x2) & (yy >= y1) & (yy <= y2)
    elif class_id == 1:  # ellipse inscribed in the box
        mask = (((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2) <= 1.0
    else:  # triangle: apex top-center, base at the bottom edge
        frac = np.clip((yy - y1) / h, 0.0, 1.0)
        mask = (yy >= y1) & (yy <= y2) & (np.abs(xx - cx) <= frac * (w / 2))
    img[:, mask] = np.asarray(color, dtype=img.dtype)[:, None]


def gen_synthetic_dataset(n, image_side, classes=3, seed=0):
    """n images of 1-3 colored shapes (square/circle/triangle = class
    0/1/2) on a dark noisy background, with exact box labels.

    Deterministic for a given seed. Returns a list of (image (3,H,W)
    float32 in [0,1], [GroundTruthBox]).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if classes > len(SHAPE_COLORS):
        raise ValueError(f"at most {len(SHAPE_COLORS)} classes supported")
    rng = np.random.default_rng(seed)
    dataset = []
    for _ in range(n):
        img = rng.uniform(0.0, 0.15, (3, image_side, image_side)).astype(np.float32)
        gts = []
        for _ in range(int(rng.integers(1, 4))):
            class_id = int(rng.integers(0, classes))
            for _attempt in range(20):
                w = float(rng.uniform(0.25, 0.55))
                h = float(rng.uniform(0.25, 0.55))
                cx = float(rng.uniform(w / 2, 1 - w / 2))
                cy = float(rng.uniform(h / 2, 1 - h / 2))
                box = BBox(cx, cy, w, h)
                if all(iou(box, g.bbox) < 0.05 for g in gts):
                    break
            else:
                continue  # crowded image, skip this shape
            jitter = rng.uniform(-0.08, 0.08, 3)
            color = np.clip(np.asarray(SHAPE_COLORS[class_id]) + jitter, 0.2, 1.0)
            _rasterize(img, class_id, cx, cy, w, h, color.astype(np.float32))
            gts.append(GroundTruthBox(class_id=class_id, bbox=box))
        dataset.append((img, gts))
    return dataset


# ---------------------------------------------------------------------------
# toy trainer

@dataclass
class TrainResult:
    blob: WeightsBlob
    loss_curve: list = field(default_factory=list)


def init_weights(spec: NetworkSpec, seed=0) -> WeightsBlob:
    """He-style init: kernel ~ N(0, sqrt(2/fan_in)), zero biases."""
    from litedet.darknet import _conv_in_channels

    rng = np.random.default_rng(seed)
    per_layer = []
    for layer, c in zip(spec.conv_layers(), _conv_in_channels(spec)):
        n, k = layer.filters, layer.size
        fan_in = c * k * k
        kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), (n, c, k, k))
        per_layer.append(ConvWeights(biases=np.zeros(n, dtype=np.float32),
                                     kernel=kernel.astype(np.float32)))
    return WeightsBlob(per_layer=per_layer)


def train_toy(spec: NetworkSpec, dataset, iters=2000, lr=1e-3, momentum=0.9,
              seed=0, loss_cfg: LossConfig | None = None,
              clip_norm: float = 10.0) -> TrainResult:
    """Per-iteration single-image SGD over the dataset.

    Gradients are clipped to a global L2 norm of clip_norm before each
    step; the coordinate-loss gradient grows with predicted box size, so
    an unlucky early step can otherwise blow up the run. Deterministic
    for a fixed seed; raises Divergence if the loss goes non-finite.
    """
    violations = validate(spec)
    if violations:
        raise ValueError("invalid spec: " + "; ".join(violations))
    if any(l.batch_normalize for l in spec.conv_layers()):
        raise UnsupportedLayer("training requires BN-free networks")

    blob = init_weights(spec, seed=seed)
    net = CompiledNetwork(spec, blob, precision="single")
    params = []
    for p in net.conv_params:
        params.append(p["kernel"])
        params.append(p["bias"])
    velocity = [np.zeros_like(w) for w in params]

    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(len(dataset))
    curve = []
    for it in range(iters):
        if it % len(dataset) == 0 and it > 0:
            order = rng.permutation(len(dataset))
        image, gts = dataset[order[it % len(dataset)]]
        breakdown, grads = loss_gradient(net, image, gts, loss_cfg)
        total = breakdown.total
        if not np.isfinite(total):
            raise Divergence(it)
        curve.append(total)
        flat = []
        for dk, db in grads:
            flat.append(dk)
            flat.append(db)
        if clip_norm:
            norm = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum())
                               for g in flat))
            if norm > clip_norm:
                flat = [g * (clip_norm / norm) for g in flat]
        sgd_step(params, flat, lr, momentum, velocity)

    out = WeightsBlob(per_layer=[
        ConvWeights(biases=p["bias"].astype(np.float32).copy(),
                    kernel=p["kernel"].astype(np.float32).copy())
        for p in net.conv_params
    ])
    return TrainResult(blob=out, loss_curve=curve)
