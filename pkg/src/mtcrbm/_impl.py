"""Kernel bodies shared by the numba and numpy backends.

Everything here is written in the numpy subset that numba's nopython mode
accepts, so :mod:`mtcrbm.kernels` can expose either the plain function or its
njit-compiled twin. Keep these free of Python objects, dicts, and RNGs.
"""

import numpy as np


def sigmoid(x):
    """Overflow-safe logistic, clamped to the open interval (0, 1)."""
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    # exp underflow at |x| > ~745 would otherwise yield exact 0.0 / 1.0
    return np.minimum(np.maximum(out, 5e-324), 0.9999999999999999)


def window_stack(frames, order):
    """Per-frame history windows for one sequence.

    frames: (T, D). Returns (T, order*D); row t holds frames t-order .. t-1
    concatenated oldest-first (most recent last), zero-padded before the
    start of the sequence.
    """
    t_count, dim = frames.shape
    out = np.zeros((t_count, order * dim), dtype=np.float64)
    for t in range(t_count):
        first = order - t if order > t else 0
        for k in range(first, order):
            src = t - order + k
            base = k * dim
            for i in range(dim):
                out[t, base + i] = frames[src, i]
    return out


def window_pad_counts(t_count, order):
    """Number of zero-padded leading frames in each window row."""
    out = np.empty(t_count, dtype=np.int64)
    for t in range(t_count):
        missing = order - t
        out[t] = missing if missing > 0 else 0
    return out


def morph_sweep(orig, a, b, A, B, W, label_term, blend):
    """Single forward regeneration sweep in standardized units.

    orig: (T, D) standardized frames. At each t the history window is
    blend*original + (1-blend)*generated prefix frames; the hidden mean is
    computed from the ORIGINAL frame t plus the clamped label term, and the
    regenerated frame is the gaussian visible mean. Purely deterministic.
    """
    t_count, dim = orig.shape
    hid = b.shape[0]
    order = A.shape[0] // dim if dim > 0 else 0
    gen = np.zeros((t_count, dim), dtype=np.float64)
    hist = np.zeros(order * dim, dtype=np.float64)
    for t in range(t_count):
        for k in range(order):
            src = t - order + k
            base = k * dim
            if src >= 0:
                for i in range(dim):
                    hist[base + i] = blend * orig[src, i] + (1.0 - blend) * gen[src, i]
            else:
                for i in range(dim):
                    hist[base + i] = 0.0
        if order > 0:
            c = a + np.dot(hist, A)
            d = b + np.dot(hist, B)
        else:
            c = a.copy()
            d = b.copy()
        pre = d + label_term + np.dot(orig[t], W)
        h = np.empty(hid, dtype=np.float64)
        for j in range(hid):
            x = pre[j]
            if x >= 0.0:
                z = np.exp(-x)
                h[j] = 1.0 / (1.0 + z)
            else:
                z = np.exp(x)
                h[j] = z / (1.0 + z)
        gen[t] = c + np.dot(W, h)
    return gen
