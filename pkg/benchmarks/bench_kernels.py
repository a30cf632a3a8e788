"""Benchmark the compiled kernel backend against the numpy fallback.

Two levels:

1. Per-kernel microbenchmarks, importing both backend modules directly so
   the comparison runs in one process.
2. An end-to-end training-step benchmark, run in a subprocess per backend
   because the backend is chosen once at import time via the
   BIDECODE_PURE_PYTHON environment variable.

Usage: python3 benchmarks/bench_kernels.py [--steps 30] [--size 256]
"""

import argparse
import os
import subprocess
import sys
import time
import timeit

import numpy as np


def _bench(fn, *args, repeat=5, number=50):
    best = min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number))
    return best / number


def bench_micro(size):
    from bidecode.kernels import _core, reference

    rng = np.random.default_rng(0)
    v = rng.standard_normal(size)
    g = rng.standard_normal(size)
    filt = rng.standard_normal((8, 5))
    gout = rng.standard_normal((size, filt.shape[0]))

    cases = [
        ("tanh_fwd", lambda k: k.tanh_fwd(v)),
        ("tanh_bwd", lambda k: k.tanh_bwd(np.tanh(v), g)),
        ("sigmoid_fwd", lambda k: k.sigmoid_fwd(v)),
        ("sigmoid_bwd", lambda k: k.sigmoid_bwd(1 / (1 + np.exp(-v)), g)),
        ("relu_fwd", lambda k: k.relu_fwd(v)),
        ("relu_bwd", lambda k: k.relu_bwd(v, g)),
        ("softmax_fwd", lambda k: k.softmax_fwd(v)),
        ("softmax_bwd", lambda k: k.softmax_bwd(k.softmax_fwd(v), g)),
        ("conv1d_same_fwd", lambda k: k.conv1d_same_fwd(v, filt)),
        ("conv1d_same_bwd", lambda k: k.conv1d_same_bwd(v, filt, gout)),
    ]
    print(f"per-kernel, vector length {size} (best of 5 x 50, microseconds)")
    print(f"{'kernel':<18} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for name, call in cases:
        t_ref = _bench(call, reference) * 1e6
        t_core = _bench(call, _core) * 1e6
        print(f"{name:<18} {t_ref:>9.2f}u {t_core:>9.2f}u {t_ref / t_core:>7.2f}x")


_TRAIN_SNIPPET = """
import time
import numpy as np
from bidecode import data as D, kernels, losses as L, training as TR
from bidecode.model import FORWARD, DirectionalModel, ModelDims

spec = D.build_task(vocab_size=6, feature_dim=8, noise_std=0.01, seed=5)
split = D.gen_split(spec, "train", 16, (3, 8), 10)
dims = ModelDims(vocab_size=6, feature_dim=8, embed_dim=8, hidden_dim=32,
                 state_dim=32, attn_dim=12, conv_filters=4, conv_width=5)
model = DirectionalModel(dims, FORWARD, seed=0)
cfg = L.TrainConfig(method="baseline", total_steps={steps}, batch_size=4,
                    seed=0, learning_rate=1e-3)
rng = np.random.default_rng(0)
opt = TR.make_optimizer(model, cfg)
t0 = time.perf_counter()
TR.train_steps(model, split, cfg,
               lambda m, x, y, r: TR.standard_loss_fn(m, x, y, cfg, r),
               cfg.total_steps, optimizer=opt, rng=rng, phase="bench")
elapsed = time.perf_counter() - t0
print(f"{{kernels.BACKEND}} {{elapsed / {steps}:.6f}}")
"""


def bench_training(steps):
    print(f"\nend-to-end training step (attention seq2seq, {steps} steps)")
    results = {}
    for pure in ("0", "1"):
        env = dict(os.environ, BIDECODE_PURE_PYTHON=pure)
        out = subprocess.run(
            [sys.executable, "-c", _TRAIN_SNIPPET.format(steps=steps)],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.strip().splitlines()[-1]
        backend, per_step = out.split()
        results[backend] = float(per_step)
        print(f"  backend={backend:<8} {float(per_step) * 1e3:8.2f} ms/step")
    if len(results) == 2:
        ref = results.get("reference", results.get("numpy"))
        core = [v for k, v in results.items() if k not in ("reference", "numpy")]
        if ref and core:
            print(f"  speedup: {ref / core[0]:.2f}x")
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=30,
                        help="training steps per backend for the end-to-end run")
    parser.add_argument("--size", type=int, default=256,
                        help="vector length for per-kernel benchmarks")
    args = parser.parse_args()

    from bidecode.kernels import _core  # noqa: F401 - fail fast if not built

    t0 = time.perf_counter()
    bench_micro(args.size)
    bench_training(args.steps)
    print(f"\ntotal benchmark time: {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
