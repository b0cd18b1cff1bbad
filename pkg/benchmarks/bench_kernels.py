"""Compare the compiled kernels with the numpy fallback.

Run from the repository root after installing the package::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each case is checked for bit-identical output before it is timed.
"""
import argparse
import time

import numpy as np

from histat import _pykernels, kernels
from histat.model import HiSTAT
from histat.synthdata import generate_dataset

try:
    from histat import _ckernels
except ImportError:
    _ckernels = None

# shapes met in one default training step (B*S = 4096 rows)
ROWS = 64 * 64
CASES = [
    ("matmul x@W.T  4096x7   . 7x128", "matmul", (ROWS, 7), (7, 128)),
    ("matmul x@W.T  4096x128 . 128x128", "matmul", (ROWS, 128), (128, 128)),
    ("matmul x@W.T  4096x128 . 128x32", "matmul", (ROWS, 128), (128, 32)),
    ("matmul_tn dW  (4096x128)T . 4096x128", "matmul_tn", (ROWS, 128), (ROWS, 128)),
    ("nearest_rows  4096x32 vs 64 codes", "nearest_rows", (ROWS, 32), (64, 32)),
]


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_case(op, sa, sb, repeat, rng):
    a, b = rng.normal(size=sa), rng.normal(size=sb)
    py = getattr(_pykernels, op)
    out = {"python": best_of(lambda: py(a, b), repeat)}
    if _ckernels is not None:
        c = getattr(_ckernels, op)
        assert np.array_equal(c(a, b, 1), py(a, b)), f"{op}: backends disagree"
        out["compiled"] = best_of(lambda: c(a, b, 1), repeat)
    if op != "nearest_rows":
        bb = b.T.copy() if op == "matmul" else b
        blas = (lambda: a @ bb.T.copy()) if op == "matmul" else (lambda: a.T @ bb)
        out["numpy BLAS (reference, unordered)"] = best_of(blas, repeat)
    return out


def bench_step(repeat):
    data = generate_dataset(64, seed=0)
    model = HiSTAT()
    out = {}
    backends = ["python"] + (["compiled"] if _ckernels is not None else [])
    grads = {}
    for name in backends:
        prev = kernels.use_backend(name)
        try:
            def step():
                s = model.forward(data)
                return model.flatten_grads(model.backward(s))
            grads[name] = step()
            out[name] = best_of(step, repeat)
        finally:
            kernels.use_backend(prev)
    if len(grads) == 2:
        assert grads["python"].tobytes() == grads["compiled"].tobytes(), "step gradients differ"
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"compiled extension: {'yes ' + str(_ckernels.FEATURES) if _ckernels else 'not built'}")
    print(f"{'case':40s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s} {'BLAS ms':>8s}")
    rows = [(label, bench_case(op, sa, sb, args.repeat, rng)) for label, op, sa, sb in CASES]
    rows.append(("full forward+backward step (B=64,S=64)", bench_step(max(1, args.repeat // 2))))
    for label, r in rows:
        py, c = r["python"] * 1e3, r.get("compiled", float("nan")) * 1e3
        blas = r.get("numpy BLAS (reference, unordered)", float("nan")) * 1e3
        print(f"{label:40s} {py:10.2f} {c:12.2f} {py / c:7.2f}x {blas:8.2f}")


if __name__ == "__main__":
    main()
