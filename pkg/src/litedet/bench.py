"""Latency/FPS measurement harness over compiled networks.

Measurements run single-threaded with a monotonic clock; absolute FPS
is hardware-specific, so only ratios and orderings are asserted
anywhere. `compare_backends` times the same network under the numba and
pure-numpy kernel paths (see litedet.backend).
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from litedet.inference import CompiledNetwork, forward


@dataclass
class BenchStats:
    iterations: int
    warmup: int
    median_ms: float
    p5_ms: float
    p95_ms: float
    per_layer_ms: list = field(default_factory=list)  # mean per layer, optional

    @property
    def fps(self) -> float:
        return 1000.0 / self.median_ms

    def to_dict(self):
        d = {"iterations": self.iterations, "warmup": self.warmup,
             "median_ms": self.median_ms, "p5_ms": self.p5_ms,
             "p95_ms": self.p95_ms, "fps": self.fps}
        if self.per_layer_ms:
            d["per_layer_ms"] = self.per_layer_ms
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iterations", "warmup", "median_ms", "p5_ms",
                         "p95_ms", "fps"])
        writer.writerow([self.iterations, self.warmup, self.median_ms,
                         self.p5_ms, self.p95_ms, self.fps])
        return buf.getvalue()


def measure(net: CompiledNetwork, iters=50, warmup=5, seed=0,
            per_layer=False) -> BenchStats:
    """Time `iters` forwards on a fixed seeded random input, after
    discarded warmup runs."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, net.input_shape).astype(net.dtype)

    for _ in range(warmup):
        forward(net, x)

    samples = []
    layer_totals = None
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        _, timings = forward(net, x, collect_timings=per_layer)
        samples.append((time.perf_counter_ns() - t0) / 1e6)
        if per_layer:
            if layer_totals is None:
                layer_totals = [0.0] * len(timings)
            for i, t in enumerate(timings):
                layer_totals[i] += t.elapsed_ns / 1e6

    arr = np.asarray(samples)
    return BenchStats(
        iterations=iters,
        warmup=warmup,
        median_ms=float(np.median(arr)),
        p5_ms=float(np.percentile(arr, 5)),
        p95_ms=float(np.percentile(arr, 95)),
        per_layer_ms=[t / iters for t in layer_totals] if layer_totals else [],
    )


def compare(a: BenchStats, b: BenchStats) -> dict:
    """Median-latency and fps ratios of b relative to a (b/a latency,
    a/b fps)."""
    return {
        "a_median_ms": a.median_ms,
        "b_median_ms": b.median_ms,
        "latency_ratio_b_over_a": b.median_ms / a.median_ms,
        "fps_ratio_a_over_b": a.fps / b.fps,
    }


def compare_backends(spec, blob, iters=10, warmup=3, seed=0,
                     precision="single") -> dict:
    """Benchmark the same network under both kernel backends.

    Spawns a subprocess with LITEDET_NO_NUMBA=1 for the numpy side so
    the import-time backend choice is honored.
    """
    import os
    import subprocess
    import sys
    import tempfile

    from litedet import backend
    from litedet.darknet import emit_cfg, write_weights

    here = measure(CompiledNetwork(spec, blob, precision),
                   iters=iters, warmup=warmup, seed=seed)
    other = "numpy" if backend.USE_NUMBA else "numba"
    with tempfile.TemporaryDirectory() as tmp:
        cfg_path = os.path.join(tmp, "net.cfg")
        w_path = os.path.join(tmp, "net.weights")
        with open(cfg_path, "w") as f:
            f.write(emit_cfg(spec))
        with open(w_path, "wb") as f:
            f.write(write_weights(blob, spec))
        env = dict(os.environ)
        if other == "numpy":
            env["LITEDET_NO_NUMBA"] = "1"
        else:
            env.pop("LITEDET_NO_NUMBA", None)
            env.pop("LITEDET_BACKEND", None)
        out = subprocess.run(
            [sys.executable, "-m", "litedet.cli", "bench",
             "--cfg", cfg_path, "--weights", w_path,
             "--iters", str(iters), "--warmup", str(warmup),
             "--seed", str(seed)],
            env=env, capture_output=True, text=True, check=True)
        other_stats = json.loads(out.stdout)
    return {
        backend.backend_name(): here.to_dict(),
        other: other_stats,
        "latency_ratio": other_stats["median_ms"] / here.median_ms,
    }
