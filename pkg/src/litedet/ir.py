"""Network intermediate representation: layer specs, shape inference,
validation, and the built-in catalog of Tiny-YOLOv2-VOC and YOLO-LITE
Trial 3 architectures.

NetworkSpec values are immutable (frozen dataclasses) and are the single
source of truth for shapes, FLOPS accounting, and execution order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

LEAKY_SLOPE = 0.1

# VOC anchor priors in grid-cell units (w, h), overridable via cfg.
DEFAULT_ANCHORS = (
    (1.08, 1.19),
    (3.42, 4.41),
    (6.63, 11.38),
    (9.42, 5.11),
    (16.62, 10.52),
)


class ActivationKind(enum.Enum):
    LEAKY = "leaky"
    RELU = "relu"
    LINEAR = "linear"


class NonPositiveDim(ValueError):
    """A computed layer output dimension is <= 0."""


class KernelLargerThanInput(ValueError):
    """Kernel window exceeds the padded input extent."""


@dataclass(frozen=True)
class Shape:
    c: int
    h: int
    w: int

    def __post_init__(self):
        if self.c <= 0 or self.h <= 0 or self.w <= 0:
            raise NonPositiveDim(f"non-positive shape {(self.c, self.h, self.w)}")

    @property
    def size(self) -> int:
        return self.c * self.h * self.w


@dataclass(frozen=True)
class ConvLayer:
    filters: int
    size: int
    stride: int = 1
    pad: int = 0
    batch_normalize: bool = False
    activation: ActivationKind = ActivationKind.LINEAR


@dataclass(frozen=True)
class MaxPoolLayer:
    size: int
    stride: int = 1
    # Trailing-edge padding only (bottom/right); padded cells never win the max.
    pad: int = 0


@dataclass(frozen=True)
class RegionLayer:
    classes: int
    num_anchors: int
    anchors: tuple = DEFAULT_ANCHORS
    coords: int = 4


LayerSpec = ConvLayer | MaxPoolLayer | RegionLayer


@dataclass(frozen=True)
class NetworkSpec:
    input_w: int
    input_h: int
    input_c: int
    layers: tuple = field(default_factory=tuple)

    def conv_layers(self) -> list[ConvLayer]:
        return [l for l in self.layers if isinstance(l, ConvLayer)]


def _conv_out(side: int, size: int, stride: int, pad: int) -> int:
    return (side + 2 * pad - size) // stride + 1


def _pool_out(side: int, size: int, stride: int, pad: int) -> int:
    return (side + pad - size) // stride + 1


def infer_shapes(net: NetworkSpec) -> list[Shape]:
    """Output shape of every layer, in order.

    Conv: floor((H + 2*pad - size)/stride) + 1 per side, zero padding on
    all sides. MaxPool: floor((H + pad - size)/stride) + 1 with pad cells
    on the bottom/right edge only. Region preserves its input shape.
    """
    if not net.layers:
        raise ValueError("empty network")
    c, h, w = net.input_c, net.input_h, net.input_w
    out = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            if layer.size > h + 2 * layer.pad or layer.size > w + 2 * layer.pad:
                raise KernelLargerThanInput(
                    f"layer {i}: conv size {layer.size} exceeds padded input {h}x{w}"
                )
            h2 = _conv_out(h, layer.size, layer.stride, layer.pad)
            w2 = _conv_out(w, layer.size, layer.stride, layer.pad)
            c, h, w = layer.filters, h2, w2
        elif isinstance(layer, MaxPoolLayer):
            if layer.size > h + layer.pad or layer.size > w + layer.pad:
                raise KernelLargerThanInput(
                    f"layer {i}: pool size {layer.size} exceeds padded input {h}x{w}"
                )
            h2 = _pool_out(h, layer.size, layer.stride, layer.pad)
            w2 = _pool_out(w, layer.size, layer.stride, layer.pad)
            h, w = h2, w2
        elif isinstance(layer, RegionLayer):
            pass  # shape-preserving
        else:
            raise TypeError(f"layer {i}: unknown layer kind {type(layer)!r}")
        if h <= 0 or w <= 0 or c <= 0:
            raise NonPositiveDim(f"layer {i}: output dims ({c},{h},{w})")
        out.append(Shape(c, h, w))
    return out


def validate(net: NetworkSpec) -> list[str]:
    """All invariant violations (empty list means ok)."""
    violations = []
    if not net.layers:
        return ["no layers"]
    if net.input_w <= 0 or net.input_h <= 0 or net.input_c <= 0:
        violations.append(f"non-positive input dims {net.input_c}x{net.input_h}x{net.input_w}")

    for i, layer in enumerate(net.layers):
        if isinstance(layer, ConvLayer):
            if layer.filters < 1:
                violations.append(f"layer {i}: filters must be >= 1")
            if layer.size < 1 or layer.stride < 1 or layer.pad < 0:
                violations.append(f"layer {i}: bad conv geometry")
        elif isinstance(layer, MaxPoolLayer):
            if layer.size < 1 or layer.stride < 1 or layer.pad < 0:
                violations.append(f"layer {i}: bad pool geometry")
        elif isinstance(layer, RegionLayer):
            if len(layer.anchors) != layer.num_anchors:
                violations.append(
                    f"layer {i}: {len(layer.anchors)} anchors for num={layer.num_anchors}"
                )
            if i != len(net.layers) - 1:
                violations.append(f"layer {i}: region must be the final layer")
            else:
                prev = net.layers[i - 1] if i > 0 else None
                want = layer.num_anchors * (layer.coords + 1 + layer.classes)
                if not isinstance(prev, ConvLayer):
                    violations.append(f"layer {i}: region must follow a conv layer")
                elif prev.filters != want:
                    violations.append(
                        f"layer {i - 1}: head expects "
                        f"{layer.num_anchors}x({layer.coords}+1+{layer.classes})={want}"
                        f" filters, got {prev.filters}"
                    )

    if not violations:
        try:
            infer_shapes(net)
        except (NonPositiveDim, KernelLargerThanInput) as e:
            violations.append(str(e))
    return violations


def _conv(filters, size, pad, bn, act=ActivationKind.LEAKY):
    return ConvLayer(filters=filters, size=size, stride=1, pad=pad,
                     batch_normalize=bn, activation=act)


def catalog_tiny_yolov2(no_batch_norm: bool = False,
                        input_side: int = 416) -> NetworkSpec:
    """Tiny-YOLOv2-VOC: 9 convs (16,32,64,128,256,512,1024,1024,125), six
    max-pools, 20-class 5-anchor region head.

    The last pool is 2x2 stride 1 with trailing pad 1, keeping the 13x13
    grid that the 125-filter 1x1 head implies.
    """
    bn = not no_batch_norm
    layers = []
    for filters in (16, 32, 64, 128, 256):
        layers.append(_conv(filters, 3, 1, bn))
        layers.append(MaxPoolLayer(size=2, stride=2))
    layers.append(_conv(512, 3, 1, bn))
    layers.append(MaxPoolLayer(size=2, stride=1, pad=1))
    layers.append(_conv(1024, 3, 1, bn))
    layers.append(_conv(1024, 3, 1, bn))
    layers.append(_conv(125, 1, 0, False, ActivationKind.LINEAR))
    layers.append(RegionLayer(classes=20, num_anchors=5))
    return NetworkSpec(input_w=input_side, input_h=input_side, input_c=3,
                       layers=tuple(layers))


def catalog_yolo_lite(no_batch_norm: bool = False) -> NetworkSpec:
    """YOLO-LITE Trial 3: 7 convs (16,32,64,128,128,256,125), five 2x2/2
    max-pools, 20-class 5-anchor region head at 224x224x3 input."""
    bn = not no_batch_norm
    layers = []
    for filters in (16, 32, 64, 128, 128):
        layers.append(_conv(filters, 3, 1, bn))
        layers.append(MaxPoolLayer(size=2, stride=2))
    layers.append(_conv(256, 3, 1, bn))
    layers.append(_conv(125, 1, 0, False, ActivationKind.LINEAR))
    layers.append(RegionLayer(classes=20, num_anchors=5))
    return NetworkSpec(input_w=224, input_h=224, input_c=3, layers=tuple(layers))


def catalog_trial2(no_batch_norm: bool = False) -> NetworkSpec:
    """Trial 2: Tiny-YOLOv2 architecture at 208x208 input."""
    return replace(catalog_tiny_yolov2(no_batch_norm), input_w=208, input_h=208)
