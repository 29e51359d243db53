"""Context-aware saliency: multi-scale patch distinctness plus immediate context.

A pixel is salient when the Lab patch around it differs from its K most
similar patches, searched over all positions at its own scale and at
half and quarter of it.  Patch dissimilarity is

    d(p_i, p_j) = d_color / (1 + c * d_position)

with ``d_color`` the Euclidean distance between vectorized Lab patches
divided by the patch element count and ``d_position`` the distance of
the patch centers divided by the image diagonal.  Single-scale saliency
is ``1 - exp(-mean of the K smallest d)``; the multi-scale map is the
mean over scales, and pixels outside the attended set (mean above the
attention threshold) are damped by their distance to it.
"""

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .tensor import gray_to_rgb, normalize_minmax, resize_bilinear, rgb_to_lab

# tbb on this platform is too old; skip the probe
numba.config.THREADING_LAYER = "workqueue"

# comparison patches are drawn at these fractions of the query scale
CANDIDATE_FACTORS = (1.0, 0.5, 0.25)


@dataclass
class SaliencyConfig:
    patch_radius: int = 3
    c: float = 3.0
    K: int = 64
    scales: tuple = (1.0, 0.5, 0.25)
    attention_threshold: float = 0.8
    working_width: int = 250
    method: str = "fast"
    # rescale the multi-scale mean to [0, 1] before picking attended pixels
    normalize_before_context: bool = True

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if self.K < 1:
            raise InvalidArgumentError("K must be >= 1")
        if self.c < 0:
            raise InvalidArgumentError("c must be >= 0")
        if self.patch_radius < 0:
            raise InvalidArgumentError("patch_radius must be >= 0")
        if not self.scales or any(not 0.0 < s <= 1.0 for s in self.scales):
            raise InvalidArgumentError(f"scales must be a nonempty subset of (0, 1], got {self.scales}")
        if not 0.0 < self.attention_threshold < 1.0:
            raise InvalidArgumentError("attention_threshold must lie in (0, 1)")
        if self.working_width < 1:
            raise InvalidArgumentError("working_width must be >= 1")
        if self.method not in ("fast", "exhaustive"):
            raise InvalidArgumentError(f"unknown search method {self.method!r}")

    @property
    def M(self):
        return len(self.scales)


@dataclass(eq=False)
class SaliencyMap:
    values: np.ndarray  # (H, W) in [0, 1]
    attended_mask: np.ndarray  # (H, W) bool
    meta: dict = field(default_factory=dict)


def combine_dissimilarity(d_color, d_position, c):
    return d_color / (1.0 + c * d_position)


def patch_dissimilarity(p_i, p_j, c, center_i=(0.0, 0.0), center_j=(0.0, 0.0), diag=1.0):
    """Dissimilarity of two equally sized patches centered at the given pixels."""
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    if p_i.shape != p_j.shape:
        raise InvalidArgumentError(f"patch shapes differ: {p_i.shape} vs {p_j.shape}")
    d_color = np.sqrt(np.sum((p_i - p_j) ** 2)) / p_i.size
    d_pos = math.dist(center_i, center_j) / diag
    return float(combine_dissimilarity(d_color, d_pos, c))


def grid_diagonal(h, w):
    """Distance between the extreme pixel centers; 1 for a single pixel."""
    d = math.hypot(h - 1, w - 1)
    return d if d > 0 else 1.0


def extract_patches(lab, radius):
    """(H*W, (2r+1)^2 * C) edge-padded patches, row-major over centers."""
    h, w, ch = lab.shape
    k = 2 * radius + 1
    padded = np.pad(lab, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(0, 1))
    # (H, W, C, k, k) -> (H, W, k, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(h * w, k * k * ch)


def _centers(h, w, hq, wq):
    """Pixel centers of an h x w grid mapped into the hq x wq query frame."""
    ys = (np.arange(h) + 0.5) * (hq / h) - 0.5
    xs = (np.arange(w) + 0.5) * (wq / w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _scaled_size(h, w, s):
    return max(1, int(round(h * s))), max(1, int(round(w * s)))


def build_search(lab, scale, radius):
    """Query patches at ``scale`` plus the candidate store drawn from all candidate scales.

    Positions are in the query frame divided by its diagonal.  The first
    ``len(queries)`` candidates are the queries themselves.
    """
    h, w = lab.shape[:2]
    hq, wq = _scaled_size(h, w, scale)
    diag = grid_diagonal(hq, wq)
    feats, pos = [], []
    for f in CANDIDATE_FACTORS:
        hc, wc = (hq, wq) if f == 1.0 else _scaled_size(h, w, scale * f)
        feats.append(extract_patches(resize_bilinear(lab, hc, wc), radius))
        pos.append(_centers(hc, wc, hq, wq) / diag)
    Pc = np.ascontiguousarray(np.concatenate(feats))
    Qc = np.ascontiguousarray(np.concatenate(pos))
    nq = hq * wq
    return (hq, wq), Pc[:nq], Qc[:nq], Pc, Qc


def knn_mean_exhaustive(Pq, Qq, Pc, Qc, K, c, n_elem):
    """Reference search: mean of the K smallest d over every candidate but self."""
    nq, nc = len(Pq), len(Pc)
    k = min(K, nc - 1)
    out = np.empty(nq)
    for i in range(nq):
        d_color = np.sqrt(np.sum((Pc - Pq[i]) ** 2, axis=1)) / n_elem
        d_pos = np.sqrt(np.sum((Qc - Qq[i]) ** 2, axis=1))
        d = combine_dissimilarity(d_color, d_pos, c)
        d[i] = np.inf
        out[i] = np.partition(d, k - 1)[:k].mean()
    return out


@numba.njit(cache=True, inline="always")
def _sift_down(heap, k):
    pos = 0
    item = heap[0]
    while True:
        child = 2 * pos + 1
        if child >= k:
            break
        if child + 1 < k and heap[child + 1] > heap[child]:
            child += 1
        if heap[child] <= item:
            break
        heap[pos] = heap[child]
        pos = child
    heap[pos] = item


@numba.njit(cache=True, inline="always")
def _offer(heap, k, Pq, Qq, Pc, Qc, Mq, Mc, i, j, c, n_elem):
    dy = Qc[j, 0] - Qq[i, 0]
    dx = Qc[j, 1] - Qq[i, 1]
    penalty = n_elem * (1.0 + c * math.sqrt(dy * dy + dx * dx))
    limit = heap[0] * penalty
    limit = limit * limit
    # scaled channel means bound the squared distance from below
    lb = 0.0
    for t in range(Mq.shape[1]):
        diff = Mc[j, t] - Mq[i, t]
        lb += diff * diff
    if lb > limit:
        return
    ss = 0.0
    D = Pq.shape[1]
    for t in range(D):
        diff = Pc[j, t] - Pq[i, t]
        ss += diff * diff
        if ss > limit:
            return
    d = math.sqrt(ss) / penalty
    if d < heap[0]:
        heap[0] = d
        _sift_down(heap, k)


@numba.njit(cache=True, parallel=True)
def _knn_mean_pruned(Pq, Qq, Pc, Qc, Mq, Mc, K, c, n_elem, wq, window):
    nq, nc = Pq.shape[0], Pc.shape[0]
    k = min(K, nc - 1)
    out = np.empty(nq)
    hq = nq // wq
    for i in numba.prange(nq):
        heap = np.full(k, np.inf)
        yi, xi = i // wq, i % wq
        # seed the heap with spatial neighbours, which tend to be the closest matches
        for y in range(max(0, yi - window), min(hq, yi + window + 1)):
            for x in range(max(0, xi - window), min(wq, xi + window + 1)):
                j = y * wq + x
                if j != i:
                    _offer(heap, k, Pq, Qq, Pc, Qc, Mq, Mc, i, j, c, n_elem)
        for j in range(nc):
            if j == i:
                continue
            if j < nq:
                y, x = j // wq, j % wq
                if abs(y - yi) <= window and abs(x - xi) <= window:
                    continue
            _offer(heap, k, Pq, Qq, Pc, Qc, Mq, Mc, i, j, c, n_elem)
        s = 0.0
        for t in range(k):
            s += heap[t]
        out[i] = s / k
    return out


def channel_mean_bound(P, channels=3):
    """Per-channel patch sums divided by sqrt(pixel count).

    For any two patches the squared distance of these vectors is a lower
    bound on the squared distance of the patches themselves.
    """
    n_pix = P.shape[1] // channels
    return np.ascontiguousarray(P.reshape(len(P), n_pix, channels).sum(axis=1) / math.sqrt(n_pix))


def knn_mean_fast(Pq, Qq, Pc, Qc, K, c, n_elem, wq, window=3):
    """Same K-set mean as :func:`knn_mean_exhaustive`, with bound and partial-distance pruning."""
    Mc = channel_mean_bound(Pc)
    Mq = Mc[:len(Pq)]
    return _knn_mean_pruned(Pq, Qq, Pc, Qc, Mq, Mc, int(K), float(c), float(n_elem), int(wq), int(window))


def _prepare(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return rgb_to_lab(gray_to_rgb(img))


def _single_scale(lab, scale, cfg, method=None):
    method = method or cfg.method
    (hq, wq), Pq, Qq, Pc, Qc = build_search(lab, scale, cfg.patch_radius)
    n_elem = Pq.shape[1]
    if method == "exhaustive":
        mean_d = knn_mean_exhaustive(Pq, Qq, Pc, Qc, cfg.K, cfg.c, n_elem)
    else:
        mean_d = knn_mean_fast(Pq, Qq, Pc, Qc, cfg.K, cfg.c, n_elem, wq, cfg.patch_radius)
    k_used = min(cfg.K, len(Pc) - 1)
    return (1.0 - np.exp(-mean_d)).reshape(hq, wq), k_used


def single_scale_saliency(img, scale, cfg, method=None):
    """S^r for an image already at working resolution, returned at that resolution."""
    if scale not in cfg.scales:
        raise InvalidArgumentError(f"scale {scale} not in configured scales {cfg.scales}")
    lab = _prepare(img)
    s, _ = _single_scale(lab, scale, cfg, method)
    return resize_bilinear(s, *lab.shape[:2])


def multi_scale_saliency(img, cfg, method=None, meta=None):
    """Mean over the configured scales of the single-scale maps."""
    lab = _prepare(img)
    h, w = lab.shape[:2]
    acc = np.zeros((h, w))
    for scale in cfg.scales:
        s, k_used = _single_scale(lab, scale, cfg, method)
        acc += resize_bilinear(s, h, w)
        if meta is not None:
            meta.setdefault("k_used", []).append(k_used)
    return np.clip(acc / cfg.M, 0.0, 1.0)


def immediate_context(sbar, cfg):
    """Damp pixels outside the attended set by (1 - normalized distance to it)."""
    sbar = np.asarray(sbar, dtype=np.float64)
    mask = sbar > cfg.attention_threshold
    if not mask.any():
        return SaliencyMap(sbar.copy(), mask)
    dist = ndimage.distance_transform_edt(~mask)
    d_foci = dist / grid_diagonal(*sbar.shape)
    return SaliencyMap(sbar * (1.0 - d_foci), mask)


def working_size(h, w, working_width):
    """Images wider than ``working_width`` are shrunk to it; narrower ones keep their size."""
    if w <= working_width:
        return h, w
    return max(1, int(round(h * working_width / w))), working_width


def _nearest_resize(mask, h, w):
    mh, mw = mask.shape
    rows = np.minimum(((np.arange(h) + 0.5) * mh / h).astype(int), mh - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * mw / w).astype(int), mw - 1)
    return mask[np.ix_(rows, cols)]


def context_aware_saliency(img, cfg=None, method=None):
    """Full pipeline on an RGB image or a single-channel map.

    Single-channel inputs are min-max normalized and replicated to gray RGB
    first.  The result is upsampled to the input size and min-max
    normalized.
    """
    cfg = cfg or SaliencyConfig()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2 or img.shape[2] == 1:
        img = gray_to_rgb(normalize_minmax(img.reshape(img.shape[0], img.shape[1])))
    h, w = img.shape[:2]
    hw, ww = working_size(h, w, cfg.working_width)
    work = resize_bilinear(img, hw, ww)
    meta = {"working_size": (hw, ww)}
    sbar = multi_scale_saliency(work, cfg, method, meta)
    meta["sbar_max"] = float(sbar.max())
    if cfg.normalize_before_context:
        sbar = normalize_minmax(sbar)
    ctx = immediate_context(sbar, cfg)
    values = normalize_minmax(resize_bilinear(ctx.values, h, w))
    mask = _nearest_resize(ctx.attended_mask, h, w)
    meta["attended_pixels"] = int(ctx.attended_mask.sum())
    return SaliencyMap(values, mask, meta)
