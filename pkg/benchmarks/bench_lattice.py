"""Benchmark the compiled lattice kernels against the pure-Python fallback.

Runs the full-sum transducer and CTC dynamic programs (loss + gradient)
on a grid of problem sizes under each backend and prints the speedup.

Usage: python benchmarks/bench_lattice.py [--repeats N]

Backends are chosen via SURTKIT_LATTICE_BACKEND, which is read at import
time, so each backend runs in a fresh subprocess.
"""

import argparse
import json
import os
import subprocess
import sys
import time

SIZES = [
    # (T, U, V) encoder frames, label length, vocab
    (20, 5, 16),
    (40, 10, 16),
    (80, 20, 32),
    (160, 40, 32),
]


def run_one_backend(backend: str, repeats: int) -> dict:
    env = dict(os.environ, SURTKIT_LATTICE_BACKEND=backend)
    code = f"""
import json, time
import numpy as np
from surtkit.lattice import BACKEND_NAME, rnnt_loss, hat_loss, ctc_loss

assert BACKEND_NAME == {backend!r}, BACKEND_NAME
rng = np.random.default_rng(0)
out = {{}}
for (T, U, V) in {SIZES!r}:
    logits = rng.normal(size=(T, U + 1, V + 1))
    labels = rng.integers(1, V + 1, size=U)
    frame_logits = rng.normal(size=(T, V + 1))
    lp = frame_logits - np.log(np.exp(frame_logits).sum(-1, keepdims=True))
    for name, fn, arg in (("rnnt", rnnt_loss, logits),
                          ("hat", hat_loss, logits),
                          ("ctc", ctc_loss, lp)):
        fn(arg, labels)  # warm up
        t0 = time.perf_counter()
        for _ in range({repeats}):
            fn(arg, labels)
        out[f"{{name}}_T{{T}}_U{{U}}_V{{V}}"] = (time.perf_counter() - t0) / {repeats}
print(json.dumps(out))
"""
    res = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()

    print("benchmarking lattice backends (per-call seconds, loss+grad)")
    py = run_one_backend("python", args.repeats)
    cy = run_one_backend("cython", args.repeats)

    width = max(len(k) for k in py)
    print(f"{'problem':<{width}}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for key in py:
        s = py[key] / cy[key]
        print(f"{key:<{width}}  {py[key]:>10.6f}  {cy[key]:>10.6f}  {s:>7.1f}x")
    geo = 1.0
    for key in py:
        geo *= py[key] / cy[key]
    geo **= 1.0 / len(py)
    print(f"geometric-mean speedup: {geo:.1f}x")


if __name__ == "__main__":
    main()
