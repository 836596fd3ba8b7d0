"""Compare compiled and numpy row kernels, then a full training step.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tsmix import _kernels_py

try:
    from tsmix import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

# [batch*heads*T, T] attention rows and [batch*T, d_model] activations at the default config
ATTN = (32 * 5 * 64, 64)
ACT = (32 * 64, 100)


def kernel_cases(rng):
    att = rng.normal(size=ATTN)
    act = rng.normal(size=ACT)
    gain, bias = rng.normal(size=ACT[1]), rng.normal(size=ACT[1])
    y = _kernels_py.softmax_rows(att)
    _, xhat, rstd = _kernels_py.layer_norm_rows(act, gain, bias, 1e-5)
    g_att, g_act = rng.normal(size=ATTN), rng.normal(size=ACT)
    return {
        "softmax_rows": lambda k: k.softmax_rows(att),
        "softmax_rows_backward": lambda k: k.softmax_rows_backward(y, g_att),
        "log_softmax_rows": lambda k: k.log_softmax_rows(att),
        "layer_norm_rows": lambda k: k.layer_norm_rows(act, gain, bias, 1e-5),
        "layer_norm_rows_backward": lambda k: k.layer_norm_rows_backward(g_act, xhat, rstd, gain),
    }


STEP_SNIPPET = """
import time, numpy as np
from tsmix import kernels
from tsmix.model import ModelConfig, TransformerClassifier
from tsmix.tensor import backward, cross_entropy_soft
m = TransformerClassifier(ModelConfig(n_classes=3, n_channels=2, seq_len=64), 0)
rng = np.random.default_rng(0)
x = rng.normal(size=(32, 64, 2)); y = np.eye(3)[rng.integers(0, 3, 32)]
def step():
    m.zero_grad(); backward(cross_entropy_soft(m.forward(x, True, rng), y))
step()
best = min(timeit.repeat(step, number=1, repeat={repeat}))
print(kernels.BACKEND, best)
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, fn in kernel_cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=5, repeat=args.repeat)) / 5
        if _kernels_c is None:
            print(f"{name:28s} {t_py * 1e3:10.3f} {'n/a':>12s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels_c), number=5, repeat=args.repeat)) / 5
        print(f"{name:28s} {t_py * 1e3:10.3f} {t_c * 1e3:12.3f} {t_py / t_c:7.2f}x")

    print("\nfull training step, batch 32, default model:")
    code = "import timeit\n" + STEP_SNIPPET.format(repeat=args.repeat)
    for pure in ("0", "1"):
        env = dict(os.environ, TSMIX_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:8s} {float(secs) * 1e3:8.1f} ms/step")


if __name__ == "__main__":
    main()
