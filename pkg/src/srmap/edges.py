"""Canny edges and the SR-on-edges overlay."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .tensor import luma

EDGE_GRAY = 0.25

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(eq=False)
class EdgeMap:
    edges: np.ndarray  # (H, W) bool
    low: float
    high: float
    magnitude: np.ndarray  # normalized gradient magnitude before suppression

    @property
    def count(self):
        return int(self.edges.sum())


def _non_max_suppression(mag, gy, gx):
    """Keep pixels not smaller than both neighbours along the quantized gradient direction."""
    h, w = mag.shape
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    # 0: horizontal gradient, 1: 45deg, 2: vertical, 3: 135deg (row axis points down)
    sector = np.round(angle / 45.0).astype(int) % 4
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    p = np.pad(mag, 1, mode="constant")
    keep = np.zeros_like(mag, dtype=bool)
    # relative slack so exact ties straddling a step survive on both sides
    tol = 1e-9 * (mag.max() if mag.size else 0.0)
    for s, (dy, dx) in offsets.items():
        fwd = p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = p[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        ok = (mag >= fwd - tol) & (mag >= bwd - tol)
        keep |= (sector == s) & ok
    return keep & (mag > 0)


def hysteresis(candidates, mag, low, high):
    """Candidates above ``low`` that are 8-connected to one above ``high``."""
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    labels, n = ndimage.label(weak, structure=_EIGHT)
    if n == 0:
        return np.zeros_like(weak)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels]


def canny(img, sigma=1.4, low=0.1, high=0.2):
    """Luma -> Gaussian blur -> Sobel -> 4-direction NMS -> double-threshold hysteresis.

    ``low`` and ``high`` are fractions of the image's maximum gradient magnitude.
    """
    if not (high >= low > 0):
        raise InvalidArgumentError(f"need high >= low > 0, got low={low}, high={high}")
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    g = ndimage.gaussian_filter(luma(img), sigma, mode="nearest")
    gy = ndimage.sobel(g, axis=0, mode="nearest")
    gx = ndimage.sobel(g, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12:
        zero = np.zeros(mag.shape)
        return EdgeMap(np.zeros(mag.shape, dtype=bool), low, high, zero)
    mag = mag / peak
    thin = _non_max_suppression(mag, gy, gx)
    return EdgeMap(hysteresis(thin, mag, low, high), low, high, mag)


def fuse(sr, edges):
    """Edges in dark gray on white, with red = max(base red, SR value).

    ``sr`` may be a SaliencyMap or a bare (H, W) array in [0, 1].
    """
    values = getattr(sr, "values", sr)
    values = np.asarray(values, dtype=np.float64)
    mask = getattr(edges, "edges", edges)
    mask = np.asarray(mask, dtype=bool)
    if values.shape != mask.shape:
        raise InvalidArgumentError(f"SR map {values.shape} and edge map {mask.shape} differ in size")
    out = np.ones(mask.shape + (3,))
    out[mask] = EDGE_GRAY
    out[..., 0] = np.maximum(out[..., 0], np.clip(values, 0.0, 1.0))
    return out
