import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import make_toy_spec, seeded_input
from litedet import backend
from litedet.darknet import emit_cfg, random_blob, write_weights


needs_numba = pytest.mark.skipif(not backend.USE_NUMBA,
                                 reason="numba backend not active")


@needs_numba
class TestBackendEquality:
    """The jitted kernels must match the pure-numpy fallback bitwise."""

    def test_im2col(self):
        rng = np.random.default_rng(0)
        for size, stride, pad in ((3, 1, 1), (3, 2, 1), (2, 2, 0), (1, 1, 0)):
            x = rng.normal(size=(4, 11, 9)).astype(np.float32)
            a = backend._im2col_numpy(x, size, stride, pad)
            b = backend.im2col(x, size, stride, pad)
            assert np.array_equal(a, b)

    def test_col2im(self):
        rng = np.random.default_rng(1)
        x_shape = (3, 8, 8)
        cols = rng.normal(size=(3 * 9, 64)).astype(np.float32)
        a = backend._col2im_numpy(cols, x_shape, 3, 1, 1)
        b = backend.col2im(cols, x_shape, 3, 1, 1)
        assert np.array_equal(a, b)

    def test_maxpool_values_and_argmax(self):
        rng = np.random.default_rng(2)
        for size, stride, pad in ((2, 2, 0), (2, 1, 1), (3, 2, 0)):
            x = rng.normal(size=(3, 13, 13)).astype(np.float32)
            out_np, arg_np = backend._maxpool_numpy(x, size, stride, pad)
            out_nb, arg_nb = backend.maxpool(x, size, stride, pad)
            assert np.array_equal(out_np, out_nb)
            assert np.array_equal(arg_np, arg_nb)

    def test_maxpool_backward(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 8, 8)).astype(np.float32)
        out, argmax = backend.maxpool(x, 2, 2, 0)
        dout = rng.normal(size=out.shape).astype(np.float32)
        a = backend._maxpool_backward_numpy(dout, argmax, x.shape)
        b = backend.maxpool_backward(dout, argmax, x.shape)
        assert np.array_equal(a, b)


def test_env_flag_selects_numpy_fallback(tmp_path):
    """A subprocess with LITEDET_NO_NUMBA=1 must report the numpy backend
    and produce identical detection output."""
    spec = make_toy_spec(side=32)
    blob = random_blob(spec, seed=5)
    cfg = tmp_path / "net.cfg"
    weights = tmp_path / "net.weights"
    cfg.write_text(emit_cfg(spec))
    weights.write_bytes(write_weights(blob, spec))

    script = (
        "import json, numpy as np\n"
        "from litedet import backend\n"
        "from litedet.darknet import parse_cfg, read_weights\n"
        "from litedet.inference import CompiledNetwork, forward\n"
        f"net = parse_cfg(open({str(cfg)!r}).read())\n"
        f"blob = read_weights(open({str(weights)!r}, 'rb').read(), net)\n"
        "x = np.random.default_rng(0).uniform(0, 1, (3, 32, 32)).astype(np.float32)\n"
        "out, _ = forward(CompiledNetwork(net, blob), x)\n"
        "print(json.dumps({'backend': backend.backend_name(),"
        " 'digest': out.astype(np.float64).sum()}))\n"
    )
    results = {}
    for env_val in ("1", "0"):
        env = dict(os.environ, LITEDET_NO_NUMBA=env_val)
        env.pop("LITEDET_BACKEND", None)
        out = subprocess.run([sys.executable, "-c", script], env=env,
                             capture_output=True, text=True, check=True)
        results[env_val] = json.loads(out.stdout)
    assert results["1"]["backend"] == "numpy"
    assert results["1"]["digest"] == results["0"]["digest"]
