"""Compare the compiled and numpy kernel backends on model-sized inputs.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on
both backends after checking that they agree; the dispatching nearest-code
path (matrix-product screen plus exact rescan) is timed as well.
"""
import argparse
import time

import numpy as np

from vqdetect import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    x = rng.standard_normal((32, 16, 64, 64)).astype(np.float32)
    cols = kernels.using("python").im2col(x, 3, 1, 1)
    lat = rng.standard_normal((4096, 16)).astype(np.float32)
    cb = rng.standard_normal((512, 16)).astype(np.float32)
    return [
        ("im2col 32x16x64x64 k3", lambda k: k.im2col(x, 3, 1, 1)),
        ("col2im 32x16x64x64 k3", lambda k: k.col2im(cols, x.shape, 3, 1, 1)),
        ("nearest_code 4096 x K512 D16", lambda k: k.nearest_code(lat, cb)),
    ], (lat, cb)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    try:
        compiled = kernels.using("cython")
    except ImportError:
        compiled = None
        print("compiled extension not built; timing the numpy backend only")
    py = kernels.using("python")
    work, (lat, cb) = cases(rng)
    print(f"{'kernel':<32}{'numpy s':>10}{'cython s':>10}{'speedup':>9}")
    for name, fn in work:
        t_py = best_of(lambda: fn(py), args.repeat)
        if compiled is None:
            print(f"{name:<32}{t_py:>10.4f}{'-':>10}{'-':>9}")
            continue
        np.testing.assert_array_equal(fn(py), fn(compiled))
        t_c = best_of(lambda: fn(compiled), args.repeat)
        print(f"{name:<32}{t_py:>10.4f}{t_c:>10.4f}{t_py / t_c:>8.1f}x")
    t_screen = best_of(lambda: kernels.nearest_code(lat, cb), args.repeat)
    print(f"{'nearest_code screened (dispatch)':<32}{t_screen:>10.4f}  [{kernels.BACKEND} rescans]")


if __name__ == "__main__":
    main()
