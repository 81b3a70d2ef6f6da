"""Timing comparison: jit-compiled kernels vs their pure-numpy fallbacks.

Run directly:  python3 benchmarks/bench_kernels.py
Set CHIRPVIT_NO_NUMBA=1 to confirm the fallback path is what you measure.
"""

import time

import numpy as np

from chirpvit import kernels
from chirpvit.accel import HAS_NUMBA, USE_NUMBA


def best_of(fn, repeat=7):
    times = []
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return min(times)


def main():
    print(f"numba available: {HAS_NUMBA}, jit path active: {USE_NUMBA}")
    rng = np.random.default_rng(0)
    canvas = np.zeros((128, 128))
    field = rng.standard_normal((128, 128))
    small = rng.random((128, 128))

    cases = []

    def track_numpy():
        kernels.add_chirp_track_numpy(canvas.copy(), 10, 110, 20, 100, False, 0.5)
    cases.append(("chirp track 128x128 (numpy)", track_numpy))
    if HAS_NUMBA:
        def track_jit():
            kernels.add_chirp_track_jit(canvas.copy(), 10, 110, 20, 100, False, 0.5)
        track_jit()  # compile outside the timed region
        cases.append(("chirp track 128x128 (jit)", track_jit))

    def smooth_numpy():
        kernels.gaussian_smooth2d_numpy(field, 1.0)
    cases.append(("gaussian smooth 128x128 (numpy)", smooth_numpy))
    if HAS_NUMBA:
        def smooth_jit():
            kernels.gaussian_smooth2d_jit(field, 1.0)
        smooth_jit()
        cases.append(("gaussian smooth 128x128 (jit)", smooth_jit))

    def resize_numpy():
        kernels.resize_bilinear_numpy(small, 64, 64)
    cases.append(("bilinear 128->64 (numpy)", resize_numpy))
    if HAS_NUMBA:
        def resize_jit():
            kernels.resize_bilinear_jit(small, 64, 64)
        resize_jit()
        cases.append(("bilinear 128->64 (jit)", resize_jit))

    width = max(len(label) for label, _ in cases)
    for label, fn in cases:
        t = best_of(fn)
        print(f"{label:<{width}}  {t * 1e6:10.1f} us")


if __name__ == "__main__":
    main()
