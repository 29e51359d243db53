"""Synthetic shape scenes and a plain-SGD trainer for the fixture CNN.

Scenes are 32x32 RGB images holding one bright square or disc on a
textured background.  The trainer is a small batched numpy
implementation (conv -> relu -> pool, twice, then dense + softmax) whose
result is exported as a :class:`srmap.netrt.Network`.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import netrt
from .errors import InvalidArgumentError, NumericFailure

log = logging.getLogger(__name__)

SHAPES = ("square", "disc")


@dataclass
class FixtureSpec:
    seed: int = 0
    samples_per_class: int = 500
    classes: tuple = SHAPES
    size: int = 32
    epochs: int = 40
    batch_size: int = 25
    learning_rate: float = 0.05
    target_accuracy: float = 0.95

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise InvalidArgumentError(f"need at least two shape classes, got {list(self.classes)}")
        unknown = set(self.classes) - set(SHAPES)
        if unknown:
            raise InvalidArgumentError(f"unknown shape classes {sorted(unknown)}; choose from {SHAPES}")
        if len(set(self.classes)) != len(self.classes):
            raise InvalidArgumentError("duplicate shape classes")
        if self.samples_per_class < 1 or self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("sample count, epochs and batch size must be positive")
        if self.size < 16:
            raise InvalidArgumentError("scenes must be at least 16 pixels wide")


# --------------------------------------------------------------------------
# scenes


def _background(rng, n):
    yy, xx = np.mgrid[0:n, 0:n] / n
    base = rng.uniform(0.05, 0.35, size=3)
    freq = rng.uniform(2.0, 6.0)
    theta = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy))
    amp = rng.uniform(0.03, 0.12)
    noise = rng.normal(0.0, 0.02, size=(n, n, 1))
    return base + amp * stripes[:, :, None] + noise


def shape_mask(kind, n, cy, cx, half):
    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    if kind == "square":
        return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    if kind == "disc":
        # same area as the square of side 2*half
        r = 2.0 * half / np.sqrt(np.pi)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    raise InvalidArgumentError(f"unknown shape {kind!r}")


def make_scene(rng, kind, n=32):
    """One scene and the boolean mask of its shape."""
    img = _background(rng, n)
    half = rng.uniform(4.0, 7.0)
    margin = half * 1.2 + 1
    cy, cx = rng.uniform(margin, n - margin, size=2)
    mask = shape_mask(kind, n, cy, cx, half)
    color = rng.uniform(0.6, 1.0, size=3)
    img[mask] = color + rng.normal(0.0, 0.02, size=(int(mask.sum()), 3))
    return np.clip(img, 0.0, 1.0), mask


def make_dataset(spec, seed=None):
    """Returns ``(images (N, n, n, 3), labels (N,))`` shuffled deterministically."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    images, labels = [], []
    for label, kind in enumerate(spec.classes):
        for _ in range(spec.samples_per_class):
            images.append(make_scene(rng, kind, spec.size)[0])
            labels.append(label)
    order = rng.permutation(len(labels))
    return np.stack(images)[order], np.asarray(labels)[order]


# --------------------------------------------------------------------------
# batched layers (N, H, W, C)


def _conv_forward(x, w, b, pad):
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (N, Ho, Wo, Cin, kh, kw)
    n, ho, wo = cols.shape[:3]
    cols = cols.reshape(n * ho * wo, cin * kh * kw)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(n, ho, wo, cout), cols


def _conv_backward(dout, cols, x_shape, w, pad):
    cout, cin, kh, kw = w.shape
    n, ho, wo, _ = dout.shape
    d2 = dout.reshape(-1, cout)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cout, -1)).reshape(n, ho, wo, cin, kh, kw)
    _, h, wd, _ = x_shape
    dx = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin))
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, :, i, j]
    return dx[:, pad:pad + h, pad:pad + wd, :], dw, db


def _pool_forward(x, k):
    n, h, w, c = x.shape
    ho, wo = h // k, w // k
    win = x[:, :ho * k, :wo * k].reshape(n, ho, k, wo, k, c).transpose(0, 1, 3, 5, 2, 4)
    flat = win.reshape(n, ho, wo, c, k * k)
    arg = flat.argmax(axis=-1)
    return np.take_along_axis(flat, arg[..., None], -1)[..., 0], arg


def _pool_backward(dout, arg, x_shape, k):
    n, ho, wo, c = dout.shape
    flat = np.zeros((n, ho, wo, c, k * k))
    np.put_along_axis(flat, arg[..., None], dout[..., None], -1)
    win = flat.reshape(n, ho, wo, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * k, wo * k, c)
    dx = np.zeros(x_shape)
    dx[:, :ho * k, :wo * k] = win
    return dx


class FixtureCNN:
    """conv5x5(8) relu pool2 conv3x3(8) relu pool2 dense softmax."""

    def __init__(self, rng, size=32, n_classes=2, c1=8, c2=8):
        self.size = size
        self.w1 = rng.normal(0, np.sqrt(2.0 / (3 * 25)), (c1, 3, 5, 5))
        self.b1 = np.zeros(c1)
        self.w2 = rng.normal(0, np.sqrt(2.0 / (c1 * 9)), (c2, c1, 3, 3))
        self.b2 = np.zeros(c2)
        n_flat = (size // 4) ** 2 * c2
        self.w3 = rng.normal(0, np.sqrt(1.0 / n_flat), (n_classes, n_flat))
        self.b3 = np.zeros(n_classes)

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def logits(self, x, keep=False):
        z1, cols1 = _conv_forward(x, self.w1, self.b1, 2)
        a1 = np.maximum(z1, 0)
        p1, arg1 = _pool_forward(a1, 2)
        z2, cols2 = _conv_forward(p1, self.w2, self.b2, 1)
        a2 = np.maximum(z2, 0)
        p2, arg2 = _pool_forward(a2, 2)
        flat = p2.reshape(len(x), -1)
        out = flat @ self.w3.T + self.b3
        if keep:
            self._cache = (x, z1, cols1, a1, arg1, p1, z2, cols2, a2, arg2, p2, flat)
        return out

    def step(self, x, y, lr):
        """One SGD step on a mini-batch; returns the mean cross-entropy."""
        out = self.logits(x, keep=True)
        x, z1, cols1, a1, arg1, p1, z2, cols2, a2, arg2, p2, flat = self._cache
        out = out - out.max(axis=1, keepdims=True)
        prob = np.exp(out)
        prob /= prob.sum(axis=1, keepdims=True)
        n = len(y)
        loss = -np.mean(np.log(prob[np.arange(n), y] + 1e-300))
        dout = prob
        dout[np.arange(n), y] -= 1.0
        dout /= n
        dw3 = dout.T @ flat
        db3 = dout.sum(axis=0)
        dp2 = (dout @ self.w3).reshape(p2.shape)
        da2 = _pool_backward(dp2, arg2, a2.shape, 2)
        dz2 = da2 * (z2 > 0)
        dp1, dw2, db2 = _conv_backward(dz2, cols2, p1.shape, self.w2, 1)
        da1 = _pool_backward(dp1, arg1, a1.shape, 2)
        dz1 = da1 * (z1 > 0)
        _, dw1, db1 = _conv_backward(dz1, cols1, x.shape, self.w1, 2)
        for p, g in zip(self.params, [dw1, db1, dw2, db2, dw3, db3]):
            p -= lr * g
        if not np.isfinite(loss):
            raise NumericFailure("training diverged (non-finite loss)")
        return loss

    def accuracy(self, x, y, batch=200):
        hits = 0
        for i in range(0, len(x), batch):
            hits += int((self.logits(x[i:i + batch]).argmax(axis=1) == y[i:i + batch]).sum())
        return hits / len(x)

    def round_to_float32(self):
        for p in self.params:
            p[...] = p.astype(np.float32)

    def to_network(self, labels):
        layers = [
            netrt.Conv2D(self.w1.copy(), self.b1.copy(), 1, 2),
            netrt.ReLU(),
            netrt.MaxPool2D(2, 2, 2),
            netrt.Conv2D(self.w2.copy(), self.b2.copy(), 1, 1),
            netrt.ReLU(),
            netrt.MaxPool2D(2, 2, 2),
            netrt.Flatten(),
            netrt.Dense(self.w3.copy(), self.b3.copy()),
            netrt.Softmax(),
        ]
        return netrt.Network(layers, (self.size, self.size, 3), list(labels))


@dataclass
class TrainResult:
    network: netrt.Network
    accuracy: float
    epochs: int
    losses: list


def train_fixture(spec=None):
    """Train until the exported (float32) weights reach ``target_accuracy`` on the training set.

    Raises NumericFailure with the final accuracy if ``epochs`` run out.
    """
    spec = spec or FixtureSpec()
    x, y = make_dataset(spec)
    rng = np.random.default_rng(spec.seed + 1)
    model = FixtureCNN(rng, spec.size, len(spec.classes))
    losses, acc = [], 0.0
    for epoch in range(1, spec.epochs + 1):
        order = rng.permutation(len(y))
        total = 0.0
        for i in range(0, len(y), spec.batch_size):
            idx = order[i:i + spec.batch_size]
            total += model.step(x[idx], y[idx], spec.learning_rate) * len(idx)
        losses.append(total / len(y))
        model.round_to_float32()
        acc = model.accuracy(x, y)
        log.info("epoch %d loss %.4f train accuracy %.4f", epoch, losses[-1], acc)
        if acc >= spec.target_accuracy:
            return TrainResult(model.to_network(spec.classes), acc, epoch, losses)
    raise NumericFailure(
        f"fixture training stopped at {acc:.4f} train accuracy after {spec.epochs} epochs "
        f"(target {spec.target_accuracy})")


def write_scenes(directory, count, seed=1000, classes=SHAPES, size=32):
    """Write ``count`` scenes as PNG, alternating classes; returns the paths."""
    from pathlib import Path

    from .tensor import write_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        kind = classes[i % len(classes)]
        img, _ = make_scene(rng, kind, size)
        p = directory / f"scene_{i:04d}_{kind}.png"
        write_image(p, img)
        paths.append(p)
    return paths
