"""SSIM and the SSIM-ratio evaluation of relevance versus SR maps."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError
from .tensor import normalize_minmax


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    dynamic_range: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise InvalidArgumentError(f"SSIM window must be odd and >= 3, got {self.window}")
        if self.dynamic_range <= 0:
            raise InvalidArgumentError("dynamic range must be positive")

    @property
    def C1(self):
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def C2(self):
        return (self.k2 * self.dynamic_range) ** 2


def gaussian_window(size, sigma):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _local_mean(a, g):
    """Weighted mean over every fully contained window (valid correlation)."""
    k = len(g)
    rows = sliding_window_view(a, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(a, b, cfg=None):
    cfg = cfg or SsimConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidArgumentError(f"ssim needs two equal 2-D maps, got {a.shape} and {b.shape}")
    # shrink the window for maps smaller than it, keeping it odd
    size = min(cfg.window, a.shape[0] - (1 - a.shape[0] % 2), a.shape[1] - (1 - a.shape[1] % 2))
    size = max(size, 1)
    g = gaussian_window(size, cfg.sigma)
    mu_a, mu_b = _local_mean(a, g), _local_mean(b, g)
    var_a = _local_mean(a * a, g) - mu_a * mu_a
    var_b = _local_mean(b * b, g) - mu_b * mu_b
    cov = _local_mean(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + cfg.C1) * (2.0 * cov + cfg.C2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.C1) * (var_a + var_b + cfg.C2)
    return num / den


def ssim(a, b, cfg=None):
    """Mean Gaussian-weighted SSIM over all windows fully inside the maps."""
    return float(np.mean(ssim_map(a, b, cfg)))


@dataclass
class EvalRecord:
    image_id: str
    ssim1: float  # relevance map vs reference saliency
    ssim2: float  # SR map vs reference saliency
    ratio: float | None  # None when ssim1 <= 0
    error: str = ""

    @property
    def defined(self):
        return self.ratio is not None


def evaluate_image(lrp_map, sr_map, reference_saliency, cfg=None, image_id=""):
    lrp_n = normalize_minmax(lrp_map)
    sr_n = normalize_minmax(sr_map)
    ref_n = normalize_minmax(reference_saliency)
    s1 = ssim(lrp_n, ref_n, cfg)
    s2 = ssim(sr_n, ref_n, cfg)
    ratio = s2 / s1 if s1 > 0 else None
    return EvalRecord(image_id, s1, s2, ratio)


@dataclass
class Summary:
    count: int
    defined: int
    mean_ratio: float | None

    @property
    def empty(self):
        return self.count == 0


def aggregate(records):
    records = list(records)
    ratios = [r.ratio for r in records if r.ratio is not None and not r.error]
    mean = math.fsum(ratios) / len(ratios) if ratios else None
    return Summary(len(records), len(ratios), mean)


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_csv(path, records, summary=None):
    """``id,ssim1,ssim2,ratio`` rows; a final ``mean:n=..;defined=..`` row carries the summary.

    Unreadable images become ``<id>,error,<message>,`` rows.
    """
    summary = summary or aggregate(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "ssim1", "ssim2", "ratio"])
        for r in records:
            if r.error:
                w.writerow([r.image_id, "error", r.error, ""])
            else:
                w.writerow([r.image_id, _fmt(r.ssim1), _fmt(r.ssim2), _fmt(r.ratio) or "undefined"])
        w.writerow([f"mean:n={summary.count};defined={summary.defined}", "", "",
                    _fmt(summary.mean_ratio) or "undefined"])
