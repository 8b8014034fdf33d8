"""Time each hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--size 512]

Numba compile time is excluded by a warm-up call. Results are checked for
agreement between backends before timing is reported.
"""
import argparse
import time

import numpy as np

from spoilclass import kernels
from spoilclass._accel import HAVE_NUMBA, use_backend
from spoilclass.bof import extract_descriptors
from spoilclass.synth import texture_arrays


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(size, rng):
    _, imgs, _ = texture_arrays(2, size=size, seed=0)
    grays = [img @ np.array([0.299, 0.587, 0.114], dtype=np.float32) for img in imgs]
    desc = rng.normal(size=(50_000, 64))
    cent = rng.normal(size=(500, 64))
    train = rng.normal(size=(2000, 512))
    labels = rng.integers(0, 4, 2000)
    queries = rng.normal(size=(400, 512))
    t_idx = rng.integers(0, 7, 1_000_000)
    p_idx = rng.integers(0, 7, 1_000_000)
    return {
        f"surf descriptors ({len(grays)} images, {size}px)":
            lambda: np.concatenate([extract_descriptors(g).descriptors for g in grays]),
        "nearest centroid (50k x 500 x 64)": lambda: kernels.nearest_centroid(desc, cent)[0],
        "knn vote (400 queries, 2000 x 512, k=5)":
            lambda: kernels.knn_vote(train, labels, queries, 5, 4),
        "confusion tally (1M pairs, 7 classes)":
            lambda: kernels.confusion_tally(t_idx, p_idx, 7),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--size", type=int, default=512)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    rng = np.random.default_rng(0)
    table = cases(args.size, rng)
    print(f"{'kernel':<46}" + "".join(f"{b:>10}" for b in backends) + "   speedup")
    for name, fn in table.items():
        times, outs = [], []
        for b in backends:
            with use_backend(b):
                fn()  # warm-up / compile
                t, out = best_of(fn, args.repeat)
            times.append(t)
            outs.append(out)
        for out in outs[1:]:
            if out.dtype.kind == "f":
                assert np.allclose(out, outs[0], atol=1e-9), name
            else:
                assert np.array_equal(out, outs[0]), name
        speed = f"{times[0] / times[-1]:8.2f}x" if len(times) > 1 else ""
        print(f"{name:<46}" + "".join(f"{t:9.3f}s" for t in times) + f"  {speed}")


if __name__ == "__main__":
    main()
