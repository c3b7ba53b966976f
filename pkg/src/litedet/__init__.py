"""CPU object detection engine for shallow Darknet-family networks.

Pure-Python/numpy implementation of the Tiny-YOLOv2 / YOLO-LITE family:
model IR and catalogs, Darknet cfg/weights IO, forward and backward
kernels, region decoding + NMS, loss and toy training, PASCAL-style mAP,
FLOPS/pruning analysis, and a latency benchmark harness.

Hot kernels are numba-jitted by default; set LITEDET_NO_NUMBA=1 to force
the pure-numpy fallback (see litedet.backend).
"""

from litedet.ir import (
    ActivationKind,
    ConvLayer,
    MaxPoolLayer,
    RegionLayer,
    NetworkSpec,
    Shape,
    infer_shapes,
    validate,
    catalog_tiny_yolov2,
    catalog_yolo_lite,
)

__all__ = [
    "ActivationKind",
    "ConvLayer",
    "MaxPoolLayer",
    "RegionLayer",
    "NetworkSpec",
    "Shape",
    "infer_shapes",
    "validate",
    "catalog_tiny_yolov2",
    "catalog_yolo_lite",
]

__version__ = "0.1.0"
