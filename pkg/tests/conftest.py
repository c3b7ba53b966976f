import numpy as np
import pytest

from litedet.darknet import random_blob
from litedet.ir import (
    ActivationKind,
    ConvLayer,
    MaxPoolLayer,
    NetworkSpec,
    RegionLayer,
    catalog_tiny_yolov2,
    catalog_yolo_lite,
)


@pytest.fixture(scope="session")
def tiny_yolov2():
    return catalog_tiny_yolov2(False)


@pytest.fixture(scope="session")
def trial3():
    return catalog_yolo_lite(False)


@pytest.fixture(scope="session")
def trial3_nb():
    return catalog_yolo_lite(True)


def make_toy_spec(side=112, widths=(16, 32, 64, 64), classes=3,
                  anchors=((2.0, 2.0), (3.5, 3.5), (2.2, 3.6))):
    """Small no-BN detection net used by training/eval tests."""
    layers = []
    for f in widths:
        layers.append(ConvLayer(filters=f, size=3, stride=1, pad=1,
                                activation=ActivationKind.LEAKY))
        layers.append(MaxPoolLayer(size=2, stride=2))
    layers.append(ConvLayer(filters=len(anchors) * (5 + classes), size=1,
                            activation=ActivationKind.LINEAR))
    layers.append(RegionLayer(classes=classes, num_anchors=len(anchors),
                              anchors=anchors))
    return NetworkSpec(input_w=side, input_h=side, input_c=3,
                       layers=tuple(layers))


def seeded_input(net_spec, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (net_spec.input_c, net_spec.input_h,
                              net_spec.input_w)).astype(dtype)


@pytest.fixture
def toy_spec():
    return make_toy_spec()


@pytest.fixture
def trial3_blob(trial3):
    return random_blob(trial3, seed=42)
