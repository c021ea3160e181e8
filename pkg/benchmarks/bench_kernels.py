"""Time the compiled geometric kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from dlfkit import _kernels_py

try:
    from dlfkit import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(rng):
    pts = rng.uniform(-1, 1, (512, 2))
    centers = rng.uniform(-1, 1, (16, 2))
    sizes = rng.uniform(0.1, 0.5, (16, 2))
    yaws = rng.uniform(-np.pi, np.pi, 16)
    assign = _kernels_py.assign_nearest(pts, centers)
    return {
        "knn_indices n=512 k=8": lambda m: m.knn_indices(pts, 8, True),
        "assign_nearest n=512 m=16": lambda m: m.assign_nearest(pts, centers),
        "inside_oriented n=512 m=16": lambda m: m.inside_oriented(pts, centers, sizes, yaws, assign),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    impls = {"python": _kernels_py}
    if _kernels is not None:
        impls["cython"] = _kernels
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name in impls) + ("     speedup" if _kernels else ""))
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {name: min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
                 for name, mod in impls.items()}
        line = f"{label:32s}" + "".join(f"{times[n]:12.3f}ms" for n in impls)
        if _kernels is not None:
            line += f"{times['python'] / times['cython']:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
