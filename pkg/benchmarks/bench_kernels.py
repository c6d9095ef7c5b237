#!/usr/bin/env python3
"""Compiled kernels vs the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median time per call of each kernel on training-sized inputs,
then one training step and one inference batch of the default model run
under each backend (the fallback is forced with ``BLCB_PURE_PYTHON=1`` in a
child process).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from blcb import _kernels_py as py

try:
    from blcb import _ckernels as ck
except ImportError:
    ck = None

MODEL_SNIPPET = """
import time, numpy as np
from blcb import kernels
from blcb.nn.model import ModelConfig, build_model, loss_and_backward
m = build_model(ModelConfig())
rng = np.random.default_rng(0)
x = rng.random((64, 64, 64), dtype=np.float32)
y = rng.integers(0, 2, 64)
loss_and_backward(m, x, y)
t = time.perf_counter(); [loss_and_backward(m, x, y) for _ in range({n})]
step = (time.perf_counter() - t) / {n}
xb = rng.random((256, 64, 64), dtype=np.float32)
m.forward(xb)
t = time.perf_counter(); [m.forward(xb) for _ in range({n})]
infer = (time.perf_counter() - t) / {n}
print(kernels.BACKEND, step, infer)
"""


def cases(rng):
    x = rng.random((64, 32, 32, 16), dtype=np.float32)
    w = rng.standard_normal((3, 3, 16, 32)).astype(np.float32)
    b = np.zeros(32, np.float32)
    dout = rng.random((64, 32, 32, 32), dtype=np.float32)
    g, beta = np.ones(32, np.float32), np.zeros(32, np.float32)
    mask = rng.random((584, 565)) < 0.2
    offs = np.array([[dr, dc] for dr in (-1, 0, 1) for dc in (-1, 0, 1)])
    return {
        "conv2d_forward 64x32x32 16->32": lambda k: k.conv2d_forward(x, w, b, True),
        "conv2d_backward": lambda k: k.conv2d_backward(x, w, dout),
        "batchnorm_train_forward": lambda k: k.batchnorm_train_forward(dout, g, beta, 1e-5),
        "maxpool2_forward": lambda k: k.maxpool2_forward(dout),
        "binary_erode 584x565 box": lambda k: k.binary_erode(mask, offs, False),
        "binary_dilate 584x565 box": lambda k: k.binary_dilate(mask, offs),
    }


def median_time(fn, repeat):
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def model_times(pure, n):
    env = dict(os.environ, OPENBLAS_NUM_THREADS=os.environ.get("OPENBLAS_NUM_THREADS", "1"))
    if pure:
        env["BLCB_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", MODEL_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True).stdout.split()
    return out[0], float(out[1]), float(out[2])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_py = median_time(lambda: fn(py), args.repeat) * 1e3
        if ck is None:
            print(f"{name:<34}{t_py:>10.2f}{'n/a':>11}{'':>9}")
            continue
        t_c = median_time(lambda: fn(ck), args.repeat) * 1e3
        print(f"{name:<34}{t_py:>10.2f}{t_c:>11.2f}{t_py / t_c:>8.1f}x")
    print()
    print(f"{'default model (batch)':<34}{'numpy s':>10}{'cython s':>11}{'speedup':>9}")
    _, step_py, inf_py = model_times(True, args.repeat)
    backend, step_c, inf_c = model_times(False, args.repeat)
    if backend != "cython":
        print("compiled extension not built; only the fallback was measured")
    print(f"{'train step, 64 patches':<34}{step_py:>10.3f}{step_c:>11.3f}{step_py / step_c:>8.1f}x")
    print(f"{'inference, 256 patches':<34}{inf_py:>10.3f}{inf_c:>11.3f}{inf_py / inf_c:>8.1f}x")


if __name__ == "__main__":
    main()
