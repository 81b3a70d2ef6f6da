"""Hot numeric kernels with numba and pure-numpy implementations.

Three kernels dominate dataset generation and image preprocessing:

* ``add_chirp_track``   - accumulate Gaussian-weighted chirp intensity columns
* ``gaussian_smooth2d`` - separable Gaussian convolution with reflect padding
* ``resize_bilinear``   - classic bilinear resampling (no antialias filter)

Each has a ``*_numpy`` vectorized version and a compiled loop version; the
public wrappers dispatch on :data:`chirpvit.accel.USE_NUMBA`.  Both versions
implement identical arithmetic and are cross-checked in the test suite.

Reflect padding here is the edge-including kind (index -1 maps back to 0),
which makes a unit-sum kernel conserve the total matrix sum exactly; the
mirror variant that skips the edge sample does not.
"""

import math

import numpy as np

from .accel import HAS_NUMBA, USE_NUMBA, njit


# ---------------------------------------------------------------------------
# chirp track rendering
# ---------------------------------------------------------------------------

def _track_centers(t_start, t_end, f_start, f_end, exponential):
    """Real-valued center frequency bin for each time bin in the track."""
    span = t_end - t_start
    tb = np.arange(t_start, t_end + 1, dtype=np.float64)
    tau = (tb - t_start) / span if span > 0 else np.zeros_like(tb)
    if exponential:
        fb = f_start * (f_end / f_start) ** tau
    else:
        fb = f_start + (f_end - f_start) * tau
    return fb


def add_chirp_track_numpy(data, t_start, t_end, f_start, f_end, exponential, sigma):
    fb = _track_centers(t_start, t_end, f_start, f_end, exponential)
    rows = np.arange(data.shape[0], dtype=np.float64)[:, None]
    data[:, t_start:t_end + 1] += np.exp(-((rows - fb[None, :]) ** 2) / (2.0 * sigma * sigma))


def _add_chirp_track_loops(data, t_start, t_end, f_start, f_end, exponential, sigma):
    n_f = data.shape[0]
    span = t_end - t_start
    inv = 1.0 / (2.0 * sigma * sigma)
    for t_b in range(t_start, t_end + 1):
        tau = (t_b - t_start) / span if span > 0 else 0.0
        if exponential:
            f_b = f_start * (f_end / f_start) ** tau
        else:
            f_b = f_start + (f_end - f_start) * tau
        for f in range(n_f):
            d = f - f_b
            data[f, t_b] += math.exp(-d * d * inv)


# ---------------------------------------------------------------------------
# separable Gaussian smoothing, reflect boundaries
# ---------------------------------------------------------------------------

def gaussian_kernel1d(sigma):
    """Unit-sum 1D Gaussian taps truncated at radius ceil(3*sigma)."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_smooth2d_numpy(data, sigma):
    if sigma == 0.0:
        return data.copy()
    k = gaussian_kernel1d(sigma)
    r = k.size // 2
    out = data
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (r, r)
        p = np.pad(out, pad, mode="symmetric")
        acc = np.zeros_like(data)
        for d in range(k.size):
            if axis == 0:
                acc += k[d] * p[d:d + data.shape[0], :]
            else:
                acc += k[d] * p[:, d:d + data.shape[1]]
        out = acc
    return out


def py_reflect_index(i, n):
    # edge-including reflection with period 2n: ... 1 0 | 0 1 .. n-1 | n-1 n-2 ...
    m = i % (2 * n)
    if m >= n:
        m = 2 * n - 1 - m
    return m


_reflect_index = py_reflect_index


def _smooth_loops(data, kernel):
    n0, n1 = data.shape
    r = kernel.size // 2
    tmp = np.empty_like(data)
    out = np.empty_like(data)
    for j in range(n1):
        for i in range(n0):
            s = 0.0
            for d in range(kernel.size):
                ii = _reflect_index(i + d - r, n0)
                s += kernel[d] * data[ii, j]
            tmp[i, j] = s
    for i in range(n0):
        for j in range(n1):
            s = 0.0
            for d in range(kernel.size):
                jj = _reflect_index(j + d - r, n1)
                s += kernel[d] * tmp[i, jj]
            out[i, j] = s
    return out


# ---------------------------------------------------------------------------
# bilinear resize
# ---------------------------------------------------------------------------

def resize_bilinear_numpy(src, out_h, out_w):
    in_h, in_w = src.shape
    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0.0, in_h - 1.0)
    xs = np.clip(xs, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    return (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)


def _resize_loops(src, out_h, out_w):
    in_h, in_w = src.shape
    out = np.empty((out_h, out_w), dtype=src.dtype)
    sy = in_h / out_h
    sx = in_w / out_w
    for i in range(out_h):
        y = (i + 0.5) * sy - 0.5
        if y < 0.0:
            y = 0.0
        if y > in_h - 1.0:
            y = in_h - 1.0
        y0 = int(math.floor(y))
        y1 = min(y0 + 1, in_h - 1)
        fy = y - y0
        for j in range(out_w):
            x = (j + 0.5) * sx - 0.5
            if x < 0.0:
                x = 0.0
            if x > in_w - 1.0:
                x = in_w - 1.0
            x0 = int(math.floor(x))
            x1 = min(x0 + 1, in_w - 1)
            fx = x - x0
            top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
            bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
            out[i, j] = (1.0 - fy) * top + fy * bot
    return out


# ---------------------------------------------------------------------------
# compiled variants and dispatchers
# ---------------------------------------------------------------------------

if HAS_NUMBA:
    _reflect_index = njit(py_reflect_index)
    add_chirp_track_jit = njit(_add_chirp_track_loops)
    _smooth_loops_jit = njit(_smooth_loops)
    resize_bilinear_jit = njit(_resize_loops)

    def gaussian_smooth2d_jit(data, sigma):
        if sigma == 0.0:
            return data.copy()
        return _smooth_loops_jit(data, gaussian_kernel1d(sigma))
else:  # pragma: no cover
    add_chirp_track_jit = None
    gaussian_smooth2d_jit = None
    resize_bilinear_jit = None


def add_chirp_track(data, t_start, t_end, f_start, f_end, exponential, sigma):
    """Add Gaussian-spread chirp intensity to ``data`` in place (full row support)."""
    if USE_NUMBA:
        add_chirp_track_jit(data, t_start, t_end, float(f_start), float(f_end),
                            exponential, float(sigma))
    else:
        add_chirp_track_numpy(data, t_start, t_end, float(f_start), float(f_end),
                              exponential, float(sigma))


def gaussian_smooth2d(data, sigma):
    """Smooth a 2D array with a unit-sum Gaussian kernel; sigma=0 is identity."""
    if USE_NUMBA:
        return gaussian_smooth2d_jit(data, float(sigma))
    return gaussian_smooth2d_numpy(data, float(sigma))


def resize_bilinear(src, out_h, out_w):
    """Resize a 2D array with bilinear interpolation; identity at equal sizes."""
    if src.shape == (out_h, out_w):
        return src.copy()
    if USE_NUMBA:
        return resize_bilinear_jit(src, out_h, out_w)
    return resize_bilinear_numpy(src, out_h, out_w)
