"""Command-line surface.

Subcommands: detect, flops, summary, eval, bench, fold-bn, prune,
gen-data, train-toy. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from litedet import analysis, bench as bench_mod, ppm
from litedet.darknet import (
    CfgError,
    WeightsError,
    parse_cfg,
    read_weights,
    write_weights,
)
from litedet.detect import BBox, decode_region, nms
from litedet.evalmap import mean_ap
from litedet.inference import CompiledNetwork, Mismatch, fold_batch_norm, forward
from litedet.ir import ConvLayer, MaxPoolLayer, RegionLayer, infer_shapes
from litedet.loss import GroundTruthBox
from litedet.train import Divergence, gen_synthetic_dataset, train_toy


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


class DataError(Exception):
    pass


def _load_net(cfg_path):
    try:
        text = Path(cfg_path).read_text()
    except OSError as e:
        raise DataError(f"cannot read cfg: {e}")
    try:
        return parse_cfg(text)
    except CfgError as e:
        raise DataError(f"{cfg_path}: {e}")


def _load_blob(weights_path, net):
    try:
        data = Path(weights_path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read weights: {e}")
    try:
        return read_weights(data, net)
    except WeightsError as e:
        raise DataError(f"{weights_path}: {e}")


def _load_image_tensor(image_path, net):
    try:
        data = Path(image_path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image: {e}")
    try:
        img = ppm.read_ppm(data)
    except ppm.PpmError as e:
        raise DataError(f"{image_path}: {e}")
    return ppm.to_input_tensor(img, net.input_w, net.input_h)


def _read_labels(path):
    gts = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read labels: {e}")
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 'class cx cy w h'")
        try:
            cid = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
            gts.append(GroundTruthBox(class_id=cid, bbox=BBox(cx, cy, w, h)))
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}")
    return gts


def _write_out(text, out_path):
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def _det_json_lines(dets):
    lines = []
    for d in dets:
        lines.append(json.dumps({
            "class_id": d.class_id, "score": round(d.score, 6),
            "cx": round(d.bbox.cx, 6), "cy": round(d.bbox.cy, 6),
            "w": round(d.bbox.w, 6), "h": round(d.bbox.h, 6)}))
    return "".join(line + "\n" for line in lines)


def cmd_detect(args):
    net = _load_net(args.cfg)
    blob = _load_blob(args.weights, net)
    region = net.layers[-1]
    if not isinstance(region, RegionLayer):
        raise DataError("network has no region layer")
    compiled = CompiledNetwork(net, blob)
    x = _load_image_tensor(args.image, net)
    head, _ = forward(compiled, x)
    dets = decode_region(head, region.anchors, region.classes,
                         conf_thresh=args.thresh)
    dets = nms(dets, iou_thresh=args.nms)
    _write_out(_det_json_lines(dets), args.out)
    return 0


def cmd_flops(args):
    net = _load_net(args.cfg)
    report = analysis.flops(net)
    _write_out(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_summary(args):
    net = _load_net(args.cfg)
    shapes = infer_shapes(net)
    lines = [f"input: {net.input_c}x{net.input_h}x{net.input_w}",
             f"{'idx':>3}  {'layer':<14} {'output (CxHxW)':<16} detail"]
    for i, (layer, s) in enumerate(zip(net.layers, shapes)):
        out = f"{s.c}x{s.h}x{s.w}"
        if isinstance(layer, ConvLayer):
            bn = " bn" if layer.batch_normalize else ""
            detail = (f"{layer.filters} {layer.size}x{layer.size}/"
                      f"{layer.stride} pad {layer.pad}{bn} "
                      f"{layer.activation.value}")
            kind = "conv"
        elif isinstance(layer, MaxPoolLayer):
            detail = f"{layer.size}x{layer.size}/{layer.stride} pad {layer.pad}"
            kind = "maxpool"
        else:
            detail = f"classes {layer.classes} anchors {layer.num_anchors}"
            kind = "region"
        lines.append(f"{i:>3}  {kind:<14} {out:<16} {detail}")
    lines.append(f"filters: {analysis.count_filters(net)}")
    lines.append(f"params: {analysis.count_params(net)}")
    lines.append(f"flops: {analysis.flops(net).total}")
    _write_out("\n".join(lines) + "\n", args.out)
    return 0


def cmd_eval(args):
    net = _load_net(args.cfg)
    blob = _load_blob(args.weights, net)
    region = net.layers[-1]
    if not isinstance(region, RegionLayer):
        raise DataError("network has no region layer")
    compiled = CompiledNetwork(net, blob)

    image_paths = sorted(Path(args.images).glob("*.ppm"))
    if not image_paths:
        raise DataError(f"no .ppm images in {args.images}")
    per_image_dets = []
    per_image_gts = []
    for img_path in image_paths:
        label_path = Path(args.labels) / (img_path.stem + ".txt")
        if not label_path.exists():
            raise DataError(f"missing labels {label_path}")
        x = _load_image_tensor(img_path, net)
        head, _ = forward(compiled, x)
        dets = decode_region(head, region.anchors, region.classes,
                             conf_thresh=args.thresh)
        per_image_dets.append(nms(dets, iou_thresh=args.nms))
        per_image_gts.append(_read_labels(label_path))

    report = mean_ap(per_image_dets, per_image_gts, region.classes,
                     iou_thresh=args.iou, interp11=args.interp11)
    _write_out(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_bench(args):
    net = _load_net(args.cfg)
    blob = _load_blob(args.weights, net)
    if args.compare_backends:
        result = bench_mod.compare_backends(net, blob, iters=args.iters,
                                           warmup=args.warmup, seed=args.seed)
        _write_out(json.dumps(result, indent=2) + "\n", args.out)
        return 0
    compiled = CompiledNetwork(net, blob)
    stats = bench_mod.measure(compiled, iters=args.iters, warmup=args.warmup,
                              seed=args.seed, per_layer=args.per_layer)
    if args.csv:
        Path(args.csv).write_text(stats.to_csv())
    _write_out(json.dumps(stats.to_dict()) + "\n", args.out)
    return 0


def cmd_fold_bn(args):
    net = _load_net(args.cfg)
    blob = _load_blob(args.weights, net)
    try:
        spec2, blob2 = fold_batch_norm(net, blob)
    except Mismatch as e:
        raise DataError(str(e))
    from litedet.darknet import emit_cfg

    Path(args.out_cfg).write_text(emit_cfg(spec2))
    Path(args.out_weights).write_bytes(write_weights(blob2, spec2))
    return 0


def cmd_prune(args):
    net = _load_net(args.cfg)
    blob = _load_blob(args.weights, net)
    pruned, report = analysis.prune_magnitude(blob, args.threshold)
    Path(args.out_weights).write_bytes(write_weights(pruned, net))
    _write_out(json.dumps(report.to_dict(), indent=2) + "\n", args.out)
    return 0


def cmd_gen_data(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = gen_synthetic_dataset(args.n, args.side, classes=args.classes,
                                    seed=args.seed)
    for i, (image, gts) in enumerate(dataset):
        stem = f"img_{i:05d}"
        (out_dir / f"{stem}.ppm").write_bytes(ppm.write_ppm(ppm.from_tensor(image)))
        lines = [f"{g.class_id} {g.bbox.cx:.6f} {g.bbox.cy:.6f} "
                 f"{g.bbox.w:.6f} {g.bbox.h:.6f}" for g in gts]
        (out_dir / f"{stem}.txt").write_text("".join(l + "\n" for l in lines))
    return 0


def cmd_train_toy(args):
    spec = _load_net(args.cfg)
    data_dir = Path(args.data)
    image_paths = sorted(data_dir.glob("*.ppm"))
    if not image_paths:
        raise DataError(f"no .ppm images in {args.data}")
    dataset = []
    for img_path in image_paths:
        label_path = data_dir / (img_path.stem + ".txt")
        if not label_path.exists():
            raise DataError(f"missing labels {label_path}")
        x = _load_image_tensor(img_path, spec)
        dataset.append((x, _read_labels(label_path)))
    try:
        result = train_toy(spec, dataset, iters=args.iters, lr=args.lr,
                           momentum=args.momentum, seed=args.seed)
    except Divergence as e:
        raise DataError(str(e))
    Path(args.out_weights).write_bytes(write_weights(result.blob, spec))
    csv_lines = ["iteration,loss"]
    csv_lines += [f"{i},{loss}" for i, loss in enumerate(result.loss_curve)]
    _write_out("\n".join(csv_lines) + "\n", args.out)
    return 0


def build_parser():
    parser = _Parser(prog="litedet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, with_out=True, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        if with_out:
            p.add_argument("--out", default=None,
                           help="write output here instead of stdout")
        return p

    p = add("detect", cmd_detect, help="run detection on one PPM image")
    p.add_argument("--cfg", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--thresh", type=float, default=0.25)
    p.add_argument("--nms", type=float, default=0.45)

    p = add("flops", cmd_flops, help="per-layer FLOPS report")
    p.add_argument("--cfg", required=True)

    p = add("summary", cmd_summary, help="layer table with shapes and counts")
    p.add_argument("--cfg", required=True)

    p = add("eval", cmd_eval, help="mAP over a directory of images + labels")
    p.add_argument("--cfg", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--interp11", action="store_true",
                   help="11-point interpolated AP (VOC2007 convention)")
    p.add_argument("--thresh", type=float, default=0.005)
    p.add_argument("--nms", type=float, default=0.45)

    p = add("bench", cmd_bench, help="forward-latency benchmark")
    p.add_argument("--cfg", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.add_argument("--per-layer", action="store_true")
    p.add_argument("--compare-backends", action="store_true",
                   help="time both the numba and pure-numpy kernel paths")

    p = add("fold-bn", cmd_fold_bn, help="fold batch norm into conv weights")
    p.add_argument("--cfg", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out-cfg", required=True)
    p.add_argument("--out-weights", required=True)

    p = add("prune", cmd_prune, help="magnitude-prune kernel weights")
    p.add_argument("--cfg", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out-weights", required=True)

    p = add("gen-data", cmd_gen_data, with_out=False,
            help="generate the synthetic shapes set")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--side", type=int, default=112)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = add("train-toy", cmd_train_toy, help="train a toy net on gen-data output")
    p.add_argument("--cfg", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-weights", required=True)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as e:
        print(f"litedet: {e}", file=sys.stderr)
        return 2
    except (CfgError, WeightsError, ppm.PpmError, Mismatch) as e:
        print(f"litedet: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
