"""Shared oracles for the test suite.

Everything here is written independently of the package internals: plain
loops and textbook formulas only, so a test comparing package output against
these helpers is a genuine cross-check rather than the same code twice.
"""

import math

import numpy as np


def finite_difference_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f at array x (64-bit)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a, b, floor=1e-3):
    """Largest elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def brute_force_render(t0, f0, f1, dt, chirp_type, n_f, n_t, T, f_max, sigma):
    """Reference chirp-track painter: explicit loops, no shared code.

    Bin conventions: ceiling for both time ends and the start frequency,
    round-half-even for the end frequency, clamps to [0, n_t-1] and
    [1, n_f-1].  Track centers interpolate linearly or geometrically in
    bin space; every row of each track column gets a Gaussian weight.
    """
    out = np.zeros((n_f, n_t))
    t_start = min(max(math.ceil(t0 / T * n_t), 0), n_t - 1)
    t_end = min(max(math.ceil((t0 + dt) / T * n_t), 0), n_t - 1)
    f_start = min(max(math.ceil(f0 / f_max * n_f), 1), n_f - 1)
    f_end = min(max(int(np.rint(f1 / f_max * n_f)), 1), n_f - 1)
    for tb in range(t_start, t_end + 1):
        if t_end == t_start:
            tau = 0.0
        else:
            tau = (tb - t_start) / (t_end - t_start)
        if chirp_type == "linear":
            fb = f_start + (f_end - f_start) * tau
        else:
            fb = f_start * (f_end / f_start) ** tau
        for fr in range(n_f):
            out[fr, tb] += math.exp(-((fr - fb) ** 2) / (2.0 * sigma * sigma))
    return out
