"""Darknet cfg (text) and weights (binary) formats.

cfg: `key=value` lines grouped under `[section]` headers, `#` comments.
weights: little-endian header (major, minor, revision as int32; `seen`
as uint64 when major*10+minor >= 2, else uint32) followed by float32
arrays per conv layer in network order: biases, then BN scales /
rolling means / rolling variances when batch_normalize, then kernel
weights in [out][in][kh][kw] order. Files are emitted as version 0.2.0.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from litedet.ir import (
    ActivationKind,
    ConvLayer,
    MaxPoolLayer,
    NetworkSpec,
    RegionLayer,
    infer_shapes,
    validate,
)


class CfgError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownSection(CfgError):
    pass


class MissingKey(CfgError):
    pass


class MalformedNumber(CfgError):
    pass


class SemanticError(CfgError):
    pass


class InvalidSpec(ValueError):
    pass


class WeightsError(ValueError):
    pass


class Truncated(WeightsError):
    pass


class TrailingBytes(WeightsError):
    pass


class NegativeVariance(WeightsError):
    pass


class LengthMismatch(WeightsError):
    pass


@dataclass
class WeightsHeader:
    major: int = 0
    minor: int = 2
    revision: int = 0
    seen: int = 0


@dataclass
class ConvWeights:
    """Learned parameters of one conv layer; BN arrays present iff the
    layer has batch_normalize."""
    biases: np.ndarray
    kernel: np.ndarray  # (n, c, k, k) float32
    bn_scales: np.ndarray | None = None
    bn_rolling_mean: np.ndarray | None = None
    bn_rolling_variance: np.ndarray | None = None

    @property
    def has_bn(self) -> bool:
        return self.bn_scales is not None


@dataclass
class WeightsBlob:
    header: WeightsHeader = field(default_factory=WeightsHeader)
    per_layer: list[ConvWeights] = field(default_factory=list)


# ---------------------------------------------------------------------------
# cfg

_CONV_KEYS = {"filters", "size", "stride", "pad", "batch_normalize", "activation"}
_POOL_KEYS = {"size", "stride", "pad"}
_REGION_KEYS = {"classes", "num", "anchors", "coords"}
_NET_KEYS = {"width", "height", "channels"}

_ACTIVATIONS = {
    "leaky": ActivationKind.LEAKY,
    "relu": ActivationKind.RELU,
    "linear": ActivationKind.LINEAR,
}


def _to_int(value, key, line):
    try:
        return int(value)
    except ValueError:
        raise MalformedNumber(f"key '{key}' has non-integer value '{value}'", line)


def _to_float(value, key, line):
    try:
        return float(value)
    except ValueError:
        raise MalformedNumber(f"key '{key}' has non-numeric value '{value}'", line)


def parse_cfg(text: str) -> NetworkSpec:
    """Parse cfg text into a validated NetworkSpec.

    Unknown keys inside known sections warn (training-only keys such as
    learning_rate are common in real cfgs); unknown sections are errors.
    """
    sections = []  # (name, line, {key: (value, line)})
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise CfgError(f"malformed section header '{line}'", lineno)
            name = line[1:-1].strip().lower()
            if name not in ("net", "network", "convolutional", "maxpool", "region"):
                raise UnknownSection(f"unsupported section '[{name}]'", lineno)
            current = (name, lineno, {})
            sections.append(current)
        else:
            if "=" not in line:
                raise CfgError(f"expected key=value, got '{line}'", lineno)
            if current is None:
                raise CfgError("key=value before any section header", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            current[2][key] = (value, lineno)

    if not sections or sections[0][0] not in ("net", "network"):
        first_line = sections[0][1] if sections else 1
        raise SemanticError("cfg must start with a [net] section", first_line)

    def require(keys, key, section_line):
        if key not in keys:
            raise MissingKey(f"missing required key '{key}'", section_line)
        return keys[key]

    def warn_unknown(name, keys, known):
        for key, (_, lineno) in keys.items():
            if key not in known:
                warnings.warn(f"cfg line {lineno}: ignoring unknown key "
                              f"'{key}' in [{name}]")

    name, net_line, keys = sections[0]
    warn_unknown("net", keys, _NET_KEYS | {
        "learning_rate", "momentum", "decay", "batch", "subdivisions",
        "max_batches", "policy", "steps", "scales", "angle", "saturation",
        "exposure", "hue", "burn_in",
    })
    def req_int(keys, key, section_line):
        value, lineno = require(keys, key, section_line)
        return _to_int(value, key, lineno)

    def opt_int(keys, key, default, section_line):
        value, lineno = keys.get(key, (str(default), section_line))
        return _to_int(value, key, lineno)

    width = req_int(keys, "width", net_line)
    height = req_int(keys, "height", net_line)
    channels = req_int(keys, "channels", net_line)

    layers = []
    for name, sec_line, keys in sections[1:]:
        if name == "convolutional":
            warn_unknown(name, keys, _CONV_KEYS)
            filters = req_int(keys, "filters", sec_line)
            size = req_int(keys, "size", sec_line)
            stride = opt_int(keys, "stride", 1, sec_line)
            pad = opt_int(keys, "pad", 0, sec_line)
            bn = opt_int(keys, "batch_normalize", 0, sec_line)
            act_str, act_line = keys.get("activation", ("linear", sec_line))
            if act_str not in _ACTIVATIONS:
                raise SemanticError(f"unknown activation '{act_str}'", act_line)
            layers.append(ConvLayer(filters=filters, size=size, stride=stride,
                                    pad=pad, batch_normalize=bool(bn),
                                    activation=_ACTIVATIONS[act_str]))
        elif name == "maxpool":
            warn_unknown(name, keys, _POOL_KEYS)
            size = req_int(keys, "size", sec_line)
            stride = opt_int(keys, "stride", 1, sec_line)
            pad = opt_int(keys, "pad", 0, sec_line)
            layers.append(MaxPoolLayer(size=size, stride=stride, pad=pad))
        elif name == "region":
            warn_unknown(name, keys, _REGION_KEYS | {
                "bias_match", "softmax", "jitter", "rescore", "object_scale",
                "noobject_scale", "class_scale", "coord_scale", "thresh",
                "absolute", "random",
            })
            classes = req_int(keys, "classes", sec_line)
            num = req_int(keys, "num", sec_line)
            coords = opt_int(keys, "coords", 4, sec_line)
            anchors_str, anc_line = require(keys, "anchors", sec_line)
            flat = [_to_float(s.strip(), "anchors", anc_line)
                    for s in anchors_str.split(",") if s.strip()]
            if len(flat) != 2 * num:
                raise SemanticError(
                    f"anchors has {len(flat)} values, expected {2 * num}", anc_line)
            anchors = tuple((flat[2 * i], flat[2 * i + 1]) for i in range(num))
            layers.append(RegionLayer(classes=classes, num_anchors=num,
                                      anchors=anchors, coords=coords))

    net = NetworkSpec(input_w=width, input_h=height, input_c=channels,
                      layers=tuple(layers))
    violations = validate(net)
    if violations:
        raise SemanticError("; ".join(violations), net_line)
    return net


def emit_cfg(net: NetworkSpec) -> str:
    """Emit cfg text; parse_cfg(emit_cfg(net)) structurally equals net."""
    violations = validate(net)
    if violations:
        raise InvalidSpec("; ".join(violations))
    lines = ["[net]",
             f"width={net.input_w}",
             f"height={net.input_h}",
             f"channels={net.input_c}",
             ""]
    for layer in net.layers:
        if isinstance(layer, ConvLayer):
            lines.append("[convolutional]")
            if layer.batch_normalize:
                lines.append("batch_normalize=1")
            lines.append(f"filters={layer.filters}")
            lines.append(f"size={layer.size}")
            lines.append(f"stride={layer.stride}")
            lines.append(f"pad={layer.pad}")
            lines.append(f"activation={layer.activation.value}")
        elif isinstance(layer, MaxPoolLayer):
            lines.append("[maxpool]")
            lines.append(f"size={layer.size}")
            lines.append(f"stride={layer.stride}")
            if layer.pad:
                lines.append(f"pad={layer.pad}")
        elif isinstance(layer, RegionLayer):
            lines.append("[region]")
            flat = ",".join(f"{v:g}" for wh in layer.anchors for v in wh)
            lines.append(f"anchors={flat}")
            lines.append(f"classes={layer.classes}")
            lines.append(f"num={layer.num_anchors}")
            lines.append(f"coords={layer.coords}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# weights

def _conv_in_channels(net: NetworkSpec) -> list[int]:
    """Input channel count of each conv layer, in order."""
    c = net.input_c
    result = []
    shapes = infer_shapes(net)
    for layer, shape in zip(net.layers, shapes):
        if isinstance(layer, ConvLayer):
            result.append(c)
        c = shape.c
    return result


def read_weights(data: bytes, net: NetworkSpec) -> WeightsBlob:
    """Parse a weights file against a validated spec; trailing bytes error."""
    if len(data) < 12:
        raise Truncated(f"file of {len(data)} bytes is shorter than the header")
    major, minor, revision = struct.unpack_from("<iii", data, 0)
    offset = 12
    if major * 10 + minor >= 2:
        if len(data) < offset + 8:
            raise Truncated("header missing seen counter")
        (seen,) = struct.unpack_from("<Q", data, offset)
        offset += 8
    else:
        if len(data) < offset + 4:
            raise Truncated("header missing seen counter")
        (seen,) = struct.unpack_from("<I", data, offset)
        offset += 4
    header = WeightsHeader(major=major, minor=minor, revision=revision, seen=seen)

    def take(count):
        nonlocal offset
        end = offset + 4 * count
        if end > len(data):
            raise Truncated(f"need {count} floats at offset {offset}, "
                            f"file has {len(data)} bytes")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).copy()
        offset = end
        return arr

    per_layer = []
    in_channels = _conv_in_channels(net)
    convs = net.conv_layers()
    for layer, c in zip(convs, in_channels):
        n, k = layer.filters, layer.size
        biases = take(n)
        if layer.batch_normalize:
            scales = take(n)
            means = take(n)
            variances = take(n)
            if np.any(variances < 0):
                raise NegativeVariance("negative BN rolling variance")
        else:
            scales = means = variances = None
        kernel = take(n * c * k * k).reshape(n, c, k, k)
        per_layer.append(ConvWeights(biases=biases, kernel=kernel,
                                     bn_scales=scales, bn_rolling_mean=means,
                                     bn_rolling_variance=variances))
    if offset != len(data):
        raise TrailingBytes(f"{len(data) - offset} unread bytes at end of file")
    return WeightsBlob(header=header, per_layer=per_layer)


def write_weights(blob: WeightsBlob, net: NetworkSpec) -> bytes:
    """Byte-exact inverse of read_weights; emits version 0.2.0."""
    convs = net.conv_layers()
    in_channels = _conv_in_channels(net)
    if len(blob.per_layer) != len(convs):
        raise LengthMismatch(f"{len(blob.per_layer)} weight groups for "
                             f"{len(convs)} conv layers")
    parts = [struct.pack("<iiiQ", 0, 2, 0, blob.header.seen)]
    for layer, c, cw in zip(convs, in_channels, blob.per_layer):
        n, k = layer.filters, layer.size
        if len(cw.biases) != n:
            raise LengthMismatch(f"{len(cw.biases)} biases for {n} filters")
        if cw.has_bn != layer.batch_normalize:
            raise LengthMismatch("BN arrays inconsistent with batch_normalize")
        if cw.kernel.shape != (n, c, k, k):
            raise LengthMismatch(f"kernel shape {cw.kernel.shape}, "
                                 f"expected {(n, c, k, k)}")
        parts.append(np.asarray(cw.biases, dtype="<f4").tobytes())
        if layer.batch_normalize:
            for arr in (cw.bn_scales, cw.bn_rolling_mean, cw.bn_rolling_variance):
                if arr is None or len(arr) != n:
                    raise LengthMismatch("bad BN array length")
                parts.append(np.asarray(arr, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(cw.kernel, dtype="<f4").tobytes())
    return b"".join(parts)


def random_blob(net: NetworkSpec, seed: int = 0, scale: float = 0.1) -> WeightsBlob:
    """Seeded random weights consistent with the spec (testing/benching)."""
    rng = np.random.default_rng(seed)
    per_layer = []
    for layer, c in zip(net.conv_layers(), _conv_in_channels(net)):
        n, k = layer.filters, layer.size
        cw = ConvWeights(
            biases=rng.normal(0, scale, n).astype(np.float32),
            kernel=rng.normal(0, scale, (n, c, k, k)).astype(np.float32),
        )
        if layer.batch_normalize:
            cw.bn_scales = rng.uniform(0.5, 1.5, n).astype(np.float32)
            cw.bn_rolling_mean = rng.normal(0, scale, n).astype(np.float32)
            cw.bn_rolling_variance = rng.uniform(0.5, 1.5, n).astype(np.float32)
        per_layer.append(cw)
    return WeightsBlob(per_layer=per_layer)
