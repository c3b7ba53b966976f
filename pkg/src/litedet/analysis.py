"""Static analysis: FLOPS accounting, filter/parameter counts, and
magnitude pruning.

FLOPS convention: 2 * k^2 * C_in * C_out * H_out * W_out per conv layer
(each multiply-accumulate counted as two operations); max-pool,
activations, batch normalization, and the region layer count as zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from litedet.darknet import ConvWeights, WeightsBlob
from litedet.ir import ConvLayer, NetworkSpec, infer_shapes, validate

FLOPS_CONVENTION = ("2*MACs, convolutions only; pooling/activation/"
                    "batch-norm/region counted as zero")


class InvalidSpec(ValueError):
    pass


@dataclass
class FlopsReport:
    per_layer: list  # (layer index, flops), conv layers only
    total: int
    convention: str = FLOPS_CONVENTION

    def to_dict(self):
        return {"total": self.total,
                "per_layer": [{"layer": i, "flops": f} for i, f in self.per_layer],
                "convention": self.convention}


@dataclass
class PruneReport:
    threshold: float
    zeroed: int
    total_weights: int

    @property
    def sparsity(self) -> float:
        return self.zeroed / self.total_weights if self.total_weights else 0.0

    def to_dict(self):
        return {"threshold": self.threshold, "zeroed": self.zeroed,
                "total_weights": self.total_weights, "sparsity": self.sparsity}


def flops(net: NetworkSpec) -> FlopsReport:
    violations = validate(net)
    if violations:
        raise InvalidSpec("; ".join(violations))
    shapes = infer_shapes(net)
    c_in = net.input_c
    per_layer = []
    total = 0
    for i, (layer, shape) in enumerate(zip(net.layers, shapes)):
        if isinstance(layer, ConvLayer):
            f = 2 * layer.size * layer.size * c_in * layer.filters * shape.h * shape.w
            per_layer.append((i, f))
            total += f
        c_in = shape.c
    return FlopsReport(per_layer=per_layer, total=total)


def count_filters(net: NetworkSpec) -> int:
    return sum(l.filters for l in net.conv_layers())


def count_params(net: NetworkSpec) -> int:
    """Kernel weights + biases, plus 3n per batch-normalized layer."""
    from litedet.darknet import _conv_in_channels

    total = 0
    for layer, c in zip(net.conv_layers(), _conv_in_channels(net)):
        n, k = layer.filters, layer.size
        total += n * c * k * k + n
        if layer.batch_normalize:
            total += 3 * n
    return total


def count_kernel_weights(net: NetworkSpec) -> int:
    from litedet.darknet import _conv_in_channels

    return sum(l.filters * c * l.size * l.size
               for l, c in zip(net.conv_layers(), _conv_in_channels(net)))


def prune_magnitude(blob: WeightsBlob, threshold: float):
    """Zero kernel weights with |w| < threshold (strict, so threshold 0
    is the identity); biases and BN statistics are untouched.

    Returns (pruned blob, PruneReport).
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    per_layer = []
    zeroed = 0
    total = 0
    for cw in blob.per_layer:
        kernel = cw.kernel.copy()
        mask = np.abs(kernel) < threshold
        kernel[mask] = 0.0
        zeroed += int(np.count_nonzero(kernel == 0))
        total += kernel.size
        per_layer.append(ConvWeights(
            biases=cw.biases.copy(), kernel=kernel,
            bn_scales=None if cw.bn_scales is None else cw.bn_scales.copy(),
            bn_rolling_mean=(None if cw.bn_rolling_mean is None
                             else cw.bn_rolling_mean.copy()),
            bn_rolling_variance=(None if cw.bn_rolling_variance is None
                                 else cw.bn_rolling_variance.copy()),
        ))
    pruned = WeightsBlob(header=blob.header, per_layer=per_layer)
    return pruned, PruneReport(threshold=threshold, zeroed=zeroed,
                               total_weights=total)
