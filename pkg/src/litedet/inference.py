"""Binds a NetworkSpec to weights, runs forward passes with optional
per-layer timing, and folds batch normalization into conv weights.

BN runs unfused when present so the BN-vs-no-BN latency gap stays
measurable; folding is an explicit rewrite via fold_batch_norm.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from litedet import kernels
from litedet.darknet import ConvWeights, WeightsBlob, WeightsHeader
from litedet.ir import ConvLayer, MaxPoolLayer, NetworkSpec, RegionLayer, infer_shapes, validate
from litedet.kernels import BN_EPS, ShapeMismatch


class Mismatch(ValueError):
    pass


@dataclass
class LayerTiming:
    layer: int
    elapsed_ns: int


class CompiledNetwork:
    """Immutable execution form of (spec, blob): weights cast to the
    requested precision, output shapes precomputed per layer."""

    def __init__(self, spec: NetworkSpec, blob: WeightsBlob,
                 precision: str = "single"):
        violations = validate(spec)
        if violations:
            raise Mismatch("invalid spec: " + "; ".join(violations))
        if precision not in ("single", "double"):
            raise ValueError(f"precision must be single or double, got {precision!r}")
        self.spec = spec
        self.precision = precision
        self.dtype = np.float32 if precision == "single" else np.float64
        self.shapes = infer_shapes(spec)

        convs = spec.conv_layers()
        if len(blob.per_layer) != len(convs):
            raise Mismatch(f"{len(blob.per_layer)} weight groups for "
                           f"{len(convs)} conv layers")
        self.conv_params = []
        for layer, cw in zip(convs, blob.per_layer):
            if cw.has_bn != layer.batch_normalize:
                raise Mismatch("BN arrays inconsistent with batch_normalize flag")
            if cw.kernel.shape[0] != layer.filters or cw.kernel.shape[2] != layer.size:
                raise Mismatch(f"kernel shape {cw.kernel.shape} vs layer "
                               f"{layer.filters}x{layer.size}")
            params = {
                "kernel": np.ascontiguousarray(cw.kernel, dtype=self.dtype),
                "bias": np.asarray(cw.biases, dtype=self.dtype),
            }
            if layer.batch_normalize:
                params["bn"] = (np.asarray(cw.bn_scales, dtype=self.dtype),
                                np.asarray(cw.bn_rolling_mean, dtype=self.dtype),
                                np.asarray(cw.bn_rolling_variance, dtype=self.dtype))
            self.conv_params.append(params)

    @property
    def input_shape(self):
        return (self.spec.input_c, self.spec.input_h, self.spec.input_w)

    @property
    def buffer_shapes(self):
        """Activation buffer shape per conv layer, from shape inference."""
        return [(s.c, s.h, s.w)
                for layer, s in zip(self.spec.layers, self.shapes)
                if isinstance(layer, ConvLayer)]

    def region_layer(self) -> RegionLayer | None:
        last = self.spec.layers[-1]
        return last if isinstance(last, RegionLayer) else None


def compile(spec: NetworkSpec, blob: WeightsBlob,
            precision: str = "single") -> CompiledNetwork:
    return CompiledNetwork(spec, blob, precision)


def forward(net: CompiledNetwork, x: np.ndarray, collect_timings: bool = False):
    """Run the layer pipeline (conv -> BN -> bias -> activation).

    Returns (output, timings) with timings None unless requested.
    """
    if tuple(x.shape) != net.input_shape:
        raise ShapeMismatch(f"input {x.shape}, expected {net.input_shape}")
    x = np.ascontiguousarray(x, dtype=net.dtype)
    timings = [] if collect_timings else None
    conv_idx = 0
    for i, layer in enumerate(net.spec.layers):
        t0 = time.perf_counter_ns() if collect_timings else 0
        if isinstance(layer, ConvLayer):
            p = net.conv_params[conv_idx]
            conv_idx += 1
            x = kernels.conv2d(x, p["kernel"], bias=None,
                               stride=layer.stride, pad=layer.pad)
            if layer.batch_normalize:
                x = kernels.batchnorm_infer(x, *p["bn"])
            x += p["bias"][:, None, None]
            x = kernels.activate(x, layer.activation)
        elif isinstance(layer, MaxPoolLayer):
            x, _ = kernels.maxpool2d(x, layer.size, layer.stride, layer.pad)
        elif isinstance(layer, RegionLayer):
            pass  # decoding happens in litedet.detect
        if collect_timings:
            timings.append(LayerTiming(layer=i, elapsed_ns=time.perf_counter_ns() - t0))
    return x, timings


def fold_batch_norm(spec: NetworkSpec, blob: WeightsBlob,
                    eps: float = BN_EPS, dtype=np.float32):
    """Fold BN statistics into conv weights: w' = w*g/sqrt(v+eps),
    b' = b - g*m/sqrt(v+eps); returns (spec', blob') with BN cleared.

    Forward outputs are preserved within floating-point tolerance. The
    fold itself runs in double; dtype controls the stored result
    (float32 matches the weights file format, float64 keeps the full
    fold precision for double-precision verification).
    """
    convs = spec.conv_layers()
    if len(blob.per_layer) != len(convs):
        raise Mismatch(f"{len(blob.per_layer)} weight groups for "
                       f"{len(convs)} conv layers")
    if not any(l.batch_normalize for l in convs):
        return spec, blob

    new_layers = []
    new_weights = []
    conv_idx = 0
    for layer in spec.layers:
        if isinstance(layer, ConvLayer):
            cw = blob.per_layer[conv_idx]
            conv_idx += 1
            if layer.batch_normalize:
                if not cw.has_bn:
                    raise Mismatch("batch_normalize layer without BN arrays")
                scale = cw.bn_scales.astype(np.float64)
                inv = scale / np.sqrt(cw.bn_rolling_variance.astype(np.float64) + eps)
                kernel = (cw.kernel.astype(np.float64)
                          * inv[:, None, None, None]).astype(dtype)
                biases = (cw.biases.astype(np.float64)
                          - inv * cw.bn_rolling_mean.astype(np.float64)).astype(dtype)
                new_layers.append(replace(layer, batch_normalize=False))
                new_weights.append(ConvWeights(biases=biases, kernel=kernel))
            else:
                new_layers.append(layer)
                new_weights.append(ConvWeights(biases=cw.biases.copy(),
                                               kernel=cw.kernel.copy()))
        else:
            new_layers.append(layer)
    new_spec = replace(spec, layers=tuple(new_layers))
    new_blob = WeightsBlob(header=WeightsHeader(seen=blob.header.seen),
                           per_layer=new_weights)
    return new_spec, new_blob
