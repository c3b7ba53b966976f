"""Binary PPM (P6) decode/encode and bilinear resize to network input.

PPM is the only image format supported, keeping the engine free of
image-codec dependencies; convert other formats externally, e.g.
`convert photo.jpg photo.ppm`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PpmError(ValueError):
    pass


class BadMagic(PpmError):
    pass


class BadDims(PpmError):
    pass


class Truncated(PpmError):
    pass


@dataclass
class PpmImage:
    width: int
    height: int
    rgb: bytes  # interleaved RGB triplets, maxval 255


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping `#` comment lines."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise Truncated("unexpected end of header")
    return data[start:pos], pos


def read_ppm(data: bytes) -> PpmImage:
    if data[:2] != b"P6":
        raise BadMagic(f"expected P6 magic, got {data[:2]!r}")
    pos = 2
    tokens = []
    for _ in range(3):
        token, pos = _read_token(data, pos)
        try:
            tokens.append(int(token))
        except ValueError:
            raise BadDims(f"non-numeric header token {token!r}")
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise BadDims(f"non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise BadDims(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = 3 * width * height
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise Truncated(f"raster has {len(raster)} of {need} bytes")
    return PpmImage(width=width, height=height, rgb=raster)


def write_ppm(img: PpmImage) -> bytes:
    if len(img.rgb) != 3 * img.width * img.height:
        raise BadDims("rgb length does not match dimensions")
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + bytes(img.rgb)


def from_tensor(x: np.ndarray) -> PpmImage:
    """(3,H,W) float tensor in [0,1] -> PPM image."""
    c, h, w = x.shape
    if c != 3:
        raise BadDims("expected 3 channels")
    bytes_hwc = (np.clip(x, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    return PpmImage(width=w, height=h,
                    rgb=bytes_hwc.transpose(1, 2, 0).tobytes())


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear stretch-resize of a (C,H,W) array (half-pixel centers)."""
    c, h, w = x.shape
    if out_h == h and out_w == w:
        return x.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - np.floor(ys), 0, 1)[None, :, None]
    fx = np.clip(xs - np.floor(xs), 0, 1)[None, None, :]
    # clip fractional parts where ys/xs fell outside [0, h-1]
    fy = np.where(ys[None, :, None] < 0, 0.0, fy)
    fx = np.where(xs[None, None, :] < 0, 0.0, fx)
    top = x[:, y0][:, :, x0] * (1 - fx) + x[:, y0][:, :, x1] * fx
    bot = x[:, y1][:, :, x0] * (1 - fx) + x[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(x.dtype)


def to_input_tensor(img: PpmImage, net_w: int, net_h: int) -> np.ndarray:
    """PPM -> (3, net_h, net_w) float32 in [0,1], stretch-resized (no
    letterboxing)."""
    if net_w <= 0 or net_h <= 0:
        raise BadDims("non-positive target dimensions")
    arr = np.frombuffer(img.rgb, dtype=np.uint8).reshape(img.height, img.width, 3)
    chw = arr.transpose(2, 0, 1).astype(np.float32) / 255.0
    return bilinear_resize(chw, net_h, net_w)
