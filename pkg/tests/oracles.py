"""Independent reference implementations used only by the tests.

Each one takes the slow, obvious route (explicit loops, dense matrices,
brute-force search) so it shares no code path with the package.
"""

import math

import numpy as np


def conv_naive(x, w, b=None, stride=1, pad=0):
    h, wd, cin = x.shape
    cout, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, cout))
    for oy in range(ho):
        for ox in range(wo):
            for co in range(cout):
                acc = 0.0 if b is None else b[co]
                for ci in range(cin):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - pad
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += w[co, ci, ky, kx] * x[iy, ix, ci]
                out[oy, ox, co] = acc
    return out


def unrolled_conv_matrix(w, in_shape, stride, pad):
    """Dense (out, in) matrix of the bias-free convolution, built column by column."""
    n_in = int(np.prod(in_shape))
    cols = []
    for k in range(n_in):
        e = np.zeros(n_in)
        e[k] = 1.0
        cols.append(conv_naive(e.reshape(in_shape), w, None, stride, pad).ravel())
    return np.stack(cols, axis=1)


def lrp_messages_loop(W, x, R_out, eps):
    """Message-by-message epsilon rule; W is (out, in).  Returns (R_in, messages)."""
    n_out, n_in = W.shape
    msgs = np.zeros((n_out, n_in))
    for j in range(n_out):
        z = sum(W[j, k] * x[k] for k in range(n_in))
        den = z + (eps if z >= 0 else -eps)
        if den == 0:
            continue
        for i in range(n_in):
            msgs[j, i] = W[j, i] * x[i] / den * R_out[j]
    return msgs.sum(axis=0), msgs


def distance_to_set_brute(mask):
    """Euclidean distance from every pixel to the nearest True pixel."""
    pts = np.argwhere(mask)
    h, w = mask.shape
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = min(math.hypot(y - py, x - px) for py, px in pts)
    return out


def srgb_to_lab_scalar(r, g, b):
    """Textbook sRGB -> XYZ (D65) -> L*a*b* for one pixel."""
    def lin(c):
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    X = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    Y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    Z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl
    Xn, Yn, Zn = 0.95047, 1.0, 1.08883

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    return 116 * f(Y / Yn) - 16, 500 * (f(X / Xn) - f(Y / Yn)), 200 * (f(Y / Yn) - f(Z / Zn))
