"""Image containers, resampling, color conversion and map/image I/O.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and values in ``[0, 1]``.  Scalar maps (relevance, saliency)
are ``(H, W)`` float64 arrays.
"""

from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

# sRGB (D65) -> XYZ
_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# white point taken from the matrix itself so gray maps to a = b = 0
_WHITE = _RGB2XYZ.sum(axis=1)

_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0


def as_image(a):
    """Validate and coerce ``a`` to a float64 ``(H, W, C)`` image."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise InvalidArgumentError(f"expected an (H, W, 1|3) image, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidArgumentError(f"empty image of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("image contains non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise InvalidArgumentError("image values must lie in [0, 1]")
    return a


def gray_to_rgb(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.shape[2] == 3:
        return img
    return np.repeat(img, 3, axis=2)


def _interp_matrix(n_in, n_out):
    """Row-stochastic (n_out, n_in) matrix of half-pixel-center linear weights."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize_bilinear(img, new_h, new_w):
    """Bilinear resampling with half-pixel-center alignment and edge clamping.

    Works on ``(H, W)`` maps as well as ``(H, W, C)`` images.  Resizing to
    the current size returns an exact copy.
    """
    new_h, new_w = int(new_h), int(new_w)
    if new_h < 1 or new_w < 1:
        raise InvalidArgumentError(f"target size must be positive, got {new_h}x{new_w}")
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[:2]
    if (h, w) == (new_h, new_w):
        return a.copy()
    my = _interp_matrix(h, new_h)
    mx = _interp_matrix(w, new_w)
    out = np.einsum("ih,hw...->iw...", my, a)
    out = np.einsum("jw,iw...->ij...", mx, out)
    # convex combinations only; clip rounding spill
    return np.clip(out, a.min(), a.max())


def rgb_to_lab(img):
    """sRGB in [0, 1] to CIE L*a*b* (D65).  L lies in [0, 100]."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidArgumentError(f"rgb_to_lab needs a 3-channel image, got shape {a.shape}")
    lin = np.where(a <= 0.04045, a / 12.92, ((a + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE
    f = np.where(xyz > _LAB_EPS, np.cbrt(xyz), (_LAB_KAPPA * xyz + 16.0) / 116.0)
    L = 116.0 * f[..., 1] - 16.0
    A = 500.0 * (f[..., 0] - f[..., 1])
    B = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([np.clip(L, 0.0, 100.0), A, B], axis=-1)


def normalize_minmax(t):
    """Affinely map ``t`` onto [0, 1]; a constant input maps to zeros."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        return t.copy()
    lo, hi = t.min(), t.max()
    if hi <= lo:
        return np.zeros_like(t)
    out = (t - lo) / (hi - lo)
    return np.clip(out, 0.0, 1.0)


def luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ np.array([0.299, 0.587, 0.114])


# --------------------------------------------------------------------------
# I/O


def to_uint8(a):
    return np.clip(np.round(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_image(path):
    """Read PNG (or anything Pillow opens) or ASCII PGM/PPM into [0, 1]."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P3"):
        return _read_ascii_pnm(path)
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "1", "I", "I;16", "F"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path, img):
    """Write a [0, 1] image (2-D map or (H, W, 1|3)) as 8-bit PNG or ASCII PGM/PPM."""
    path = Path(path)
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if path.suffix.lower() in (".pgm", ".ppm"):
        _write_ascii_pnm(path, a)
        return
    from PIL import Image

    Image.fromarray(to_uint8(a)).save(path)


def write_mask_png(path, mask):
    from PIL import Image

    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path)


def _read_ascii_pnm(path):
    tokens = []
    for line in Path(path).read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), float(tokens[3])
    channels = 1 if magic == "P2" else 3
    vals = np.array(tokens[4:4 + w * h * channels], dtype=np.float64)
    if vals.size != w * h * channels:
        raise InvalidArgumentError(f"{path}: expected {w * h * channels} samples, found {vals.size}")
    return vals.reshape(h, w, channels) / maxval


def _write_ascii_pnm(path, a):
    q = to_uint8(a)
    if q.ndim == 2:
        header = f"P2\n{q.shape[1]} {q.shape[0]}\n255\n"
    else:
        header = f"P3\n{q.shape[1]} {q.shape[0]}\n255\n"
    rows = [" ".join(str(v) for v in row.ravel()) for row in q]
    Path(path).write_text(header + "\n".join(rows) + "\n")


def write_raw(path, grid):
    """Raw float grid: ASCII header line ``H W`` then little-endian float64 data."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise InvalidArgumentError(f"raw grids are 2-D, got shape {g.shape}")
    with open(path, "wb") as fh:
        fh.write(f"{g.shape[0]} {g.shape[1]}\n".encode("ascii"))
        fh.write(g.astype("<f8").tobytes())


def read_raw(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        h, w = int(header[0]), int(header[1])
        data = fh.read()
    if len(data) != 8 * h * w:
        raise OSError(f"{path}: expected {8 * h * w} bytes of grid data, found {len(data)}")
    return np.frombuffer(data, dtype="<f8").reshape(h, w).astype(np.float64)
