"""Independent oracles shared across the test suite.

These deliberately avoid the library's own code paths: finite differences for
gradients, naive sliding-window convolution, exhaustive nearest neighbors.
"""

import numpy as np


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f() w.r.t. array x.

    ``f`` must read the live ``x`` array each call; entries are perturbed in
    place and restored.
    """
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        original = x[idx]
        x[idx] = original + h
        hi = f()
        x[idx] = original - h
        lo = f()
        x[idx] = original
        grad[idx] = (hi - lo) / (2.0 * h)
    return grad


def rel_error(a, b, floor=1e-8):
    """Max elementwise difference scaled by the larger magnitude."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / scale


def direct_conv2d(x, kernels, stride=(1, 1), padding=(0, 0)):
    """Naive sliding-window convolution (cross-correlation), no bias.

    x: (b, c, h, w); kernels: (out_ch, c, kh, kw). Returns (b, out_ch, oh, ow).
    """
    b, c, h, w = x.shape
    out_ch, _, kh, kw = kernels.shape
    sh, sw = stride
    ph, pw = padding
    padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((b, out_ch, oh, ow))
    for n in range(b):
        for o in range(out_ch):
            for i in range(oh):
                for j in range(ow):
                    patch = padded[n, :, i * sh : i * sh + kh, j * sw : j * sw + kw]
                    out[n, o, i, j] = (patch * kernels[o]).sum()
    return out


def brute_force_knn(query, reference, k, exclude=None):
    """Indices of the k nearest reference rows by Euclidean distance."""
    d = np.sqrt(((reference - query[None, :]) ** 2).sum(axis=1))
    if exclude is not None:
        d = d.copy()
        d[exclude] = np.inf
    return np.argsort(d, kind="stable")[:k]
