import pytest

from litedet.ir import (
    ActivationKind,
    ConvLayer,
    KernelLargerThanInput,
    MaxPoolLayer,
    NetworkSpec,
    NonPositiveDim,
    RegionLayer,
    Shape,
    catalog_tiny_yolov2,
    catalog_yolo_lite,
    infer_shapes,
    validate,
)


def conv_output_shapes(net):
    return [s for layer, s in zip(net.layers, infer_shapes(net))
            if isinstance(layer, ConvLayer)]


class TestInferShapes:
    def test_trial3_head_shapes(self, trial3):
        convs = conv_output_shapes(trial3)
        assert convs[5] == Shape(256, 7, 7)
        assert convs[6] == Shape(125, 7, 7)

    def test_tiny_yolov2_head_shape(self, tiny_yolov2):
        convs = conv_output_shapes(tiny_yolov2)
        assert convs[8] == Shape(125, 13, 13)

    def test_same_padding_preserves_dims(self):
        net = NetworkSpec(4, 4, 1, (ConvLayer(filters=7, size=3, pad=1),))
        assert infer_shapes(net) == [Shape(7, 4, 4)]

    def test_stride2_halves(self):
        net = NetworkSpec(4, 4, 1, (ConvLayer(filters=2, size=3, stride=2, pad=1),))
        assert infer_shapes(net) == [Shape(2, 2, 2)]

    def test_region_preserves_shape(self, trial3):
        shapes = infer_shapes(trial3)
        assert shapes[-1] == shapes[-2]

    def test_stride2_pools_halve_exactly(self, trial3):
        side = trial3.input_h
        for layer, shape in zip(trial3.layers, infer_shapes(trial3)):
            if isinstance(layer, MaxPoolLayer) and layer.stride == 2:
                assert shape.h == side // 2
                side = shape.h

    def test_stride1_pad1_pool_preserves(self):
        net = NetworkSpec(13, 13, 1, (MaxPoolLayer(size=2, stride=1, pad=1),))
        assert infer_shapes(net) == [Shape(1, 13, 13)]

    def test_empty_network_rejected(self):
        with pytest.raises(ValueError):
            infer_shapes(NetworkSpec(4, 4, 1, ()))

    def test_kernel_larger_than_input(self):
        net = NetworkSpec(2, 2, 1, (ConvLayer(filters=1, size=5),))
        with pytest.raises(KernelLargerThanInput):
            infer_shapes(net)

    def test_shape_positivity(self):
        with pytest.raises(NonPositiveDim):
            Shape(0, 1, 1)


class TestCatalogs:
    def test_tiny_yolov2_filter_sum(self, tiny_yolov2):
        assert sum(l.filters for l in tiny_yolov2.conv_layers()) == 3181

    def test_tiny_yolov2_layer_counts(self, tiny_yolov2):
        assert len(tiny_yolov2.conv_layers()) == 9
        pools = [l for l in tiny_yolov2.layers if isinstance(l, MaxPoolLayer)]
        assert len(pools) == 6

    def test_tiny_yolov2_filter_sequence(self, tiny_yolov2):
        assert [l.filters for l in tiny_yolov2.conv_layers()] == [
            16, 32, 64, 128, 256, 512, 1024, 1024, 125]

    def test_tiny_yolov2_nb_same_shapes_no_bn(self, tiny_yolov2):
        nb = catalog_tiny_yolov2(True)
        assert infer_shapes(nb) == infer_shapes(tiny_yolov2)
        assert all(not l.batch_normalize for l in nb.conv_layers())

    def test_tiny_yolov2_bn_everywhere_but_head(self, tiny_yolov2):
        convs = tiny_yolov2.conv_layers()
        assert all(l.batch_normalize for l in convs[:-1])
        assert not convs[-1].batch_normalize

    def test_trial3_filter_sum(self, trial3_nb):
        assert sum(l.filters for l in trial3_nb.conv_layers()) == 749

    def test_trial3_structure(self, trial3_nb):
        assert len(trial3_nb.conv_layers()) == 7
        assert (trial3_nb.input_w, trial3_nb.input_h) == (224, 224)
        pools = [l for l in trial3_nb.layers if isinstance(l, MaxPoolLayer)]
        assert len(pools) == 5
        assert all(p.size == 2 and p.stride == 2 and p.pad == 0 for p in pools)

    def test_trial3_grid_is_7(self, trial3_nb):
        assert infer_shapes(trial3_nb)[-1].h == 7

    def test_trial3_bn_flag_does_not_change_shapes(self, trial3, trial3_nb):
        assert infer_shapes(trial3) == infer_shapes(trial3_nb)

    def test_region_head_consistency(self, tiny_yolov2, trial3):
        for net in (tiny_yolov2, trial3):
            region = net.layers[-1]
            assert isinstance(region, RegionLayer)
            head = net.conv_layers()[-1]
            assert head.filters == region.num_anchors * (
                region.coords + 1 + region.classes)


class TestValidate:
    def test_catalogs_valid(self, tiny_yolov2, trial3, trial3_nb):
        for net in (tiny_yolov2, trial3, trial3_nb,
                    catalog_tiny_yolov2(True)):
            assert validate(net) == []

    def test_head_filter_mismatch(self, trial3):
        layers = list(trial3.layers)
        layers[-2] = ConvLayer(filters=120, size=1,
                               activation=ActivationKind.LINEAR)
        bad = NetworkSpec(224, 224, 3, tuple(layers))
        violations = validate(bad)
        assert any("5x(4+1+20)=125" in v.replace(" ", "").replace("×", "x")
                   or "125" in v for v in violations)

    def test_empty_layers(self):
        assert validate(NetworkSpec(224, 224, 3, ())) == ["no layers"]

    def test_region_not_last(self, trial3):
        layers = (trial3.layers[-1],) + trial3.layers[:-1]
        bad = NetworkSpec(224, 224, 3, layers)
        assert any("final layer" in v for v in validate(bad))

    def test_anchor_count_mismatch(self):
        region = RegionLayer(classes=20, num_anchors=3,
                             anchors=((1.0, 1.0),))
        net = NetworkSpec(224, 224, 3,
                          (ConvLayer(filters=75, size=1), region))
        assert any("anchors" in v for v in validate(net))

    def test_collects_all_violations(self):
        net = NetworkSpec(224, 224, 3, (
            ConvLayer(filters=0, size=3),
            MaxPoolLayer(size=0, stride=0),
        ))
        assert len(validate(net)) >= 2
