"""Compare the compiled and numpy exchange kernels, and time one full step.

    python3 benchmarks/bench_kernels.py [--h 0.5] [--cutoff 1.5] [--repeat 20]
"""
import argparse
import time

import numpy as np

from bdfdyn import _backend
from bdfdyn.dynamics import build_initial_state, step_unitary
from bdfdyn.energy import build_gaussian_source
from bdfdyn.kernels import _exchange_weights
from bdfdyn.lattice import build_lattice


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=0.5)
    ap.add_argument("--cutoff", type=float, default=1.5)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    lat = build_lattice(args.h, args.cutoff)
    order, offsets, w, woff = _exchange_weights(lat)
    rng = np.random.default_rng(0)
    g = rng.standard_normal((lat.size**2, 16)) + 1j * rng.standard_normal((lat.size**2, 16))
    print(f"lattice h={args.h} cutoff={args.cutoff}: M={lat.size}, kernel dimension {4 * lat.size}")

    ref = _backend.python_kernels.accumulate_diagonals(g, w, offsets, woff)
    lo, med = best_of(lambda: _backend.python_kernels.accumulate_diagonals(g, w, offsets, woff), args.repeat)
    print(f"exchange  numpy    best {lo * 1e3:8.2f} ms  median {med * 1e3:8.2f} ms")
    if _backend.compiled_kernels is None:
        print("exchange  cython   not built (set up with Cython to compare)")
    else:
        got = _backend.compiled_kernels.accumulate_diagonals(g, w, offsets, woff)
        err = np.abs(got - ref).max() / np.abs(ref).max()
        lo_c, med_c = best_of(lambda: _backend.compiled_kernels.accumulate_diagonals(g, w, offsets, woff), args.repeat)
        print(f"exchange  cython   best {lo_c * 1e3:8.2f} ms  median {med_c * 1e3:8.2f} ms  "
              f"(speedup {lo / lo_c:.2f}x, max rel diff {err:.1e})")

    src = build_gaussian_source(1.0, 1.0, 0.05, lat)
    state = build_initial_state(1, src)
    lo, med = best_of(lambda: step_unitary(state, 0.02, src), max(3, args.repeat // 5))
    print(f"unitary step ({_backend.NAME} backend)  best {lo:.3f} s  median {med:.3f} s")


if __name__ == "__main__":
    main()
