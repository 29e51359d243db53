"""Minimal CNN inference runtime that records every layer's activations.

Activations use an ``(H, W, C)`` layout.  Conv weights are stored as
``(Cout, Cin, Kh, Kw)`` and dense weights as ``(out, in)``; a dense layer
flattens its input row-major, so an explicit ``flatten`` is optional.

Manifest grammar (one directive per line, ``#`` starts a comment)::

    input h=<int> w=<int> c=<int>
    labels <name>,<name>,...           # optional
    conv2d out=<int> kh=<int> kw=<int> [stride=1] [pad=0] [bias=1]
    dense out=<int> [in=<int>] [bias=1]
    relu
    maxpool kh=<int> kw=<int> [stride=kh]
    flatten
    softmax

The weight blob is little-endian float32 values concatenated in manifest
order, each parameterized layer contributing its weights then its bias.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, SchemaError, WeightFileError


@dataclass(eq=False)
class Conv2D:
    weight: np.ndarray  # (Cout, Cin, Kh, Kw)
    bias: np.ndarray | None = None
    stride: int = 1
    pad: int = 0
    kind = "conv2d"

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]

    def output_shape(self, in_shape):
        h, w, c = in_shape
        cout, cin, kh, kw = self.weight.shape
        if c != cin:
            raise SchemaError(f"conv2d expects {cin} input channels, got {c}")
        ho = (h + 2 * self.pad - kh) // self.stride + 1
        wo = (w + 2 * self.pad - kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise SchemaError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{w} (pad={self.pad})")
        return (ho, wo, cout)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)


@dataclass(eq=False)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray | None = None
    kind = "dense"

    def output_shape(self, in_shape):
        n_in = int(np.prod(in_shape))
        if n_in != self.weight.shape[1]:
            raise SchemaError(f"dense expects {self.weight.shape[1]} inputs, got {n_in}")
        return (self.weight.shape[0],)

    def forward(self, x):
        z = self.weight @ x.reshape(-1)
        if self.bias is not None:
            z = z + self.bias
        return z


@dataclass(eq=False)
class ReLU:
    kind = "relu"

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x):
        return np.maximum(x, 0.0)


@dataclass(eq=False)
class MaxPool2D:
    kh: int
    kw: int
    stride: int
    kind = "maxpool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise SchemaError(f"maxpool needs an (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        ho = (h - self.kh) // self.stride + 1
        wo = (w - self.kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise SchemaError(f"maxpool window {self.kh}x{self.kw} does not fit input {h}x{w}")
        return (ho, wo, c)

    def forward(self, x):
        return pool_windows(x, self.kh, self.kw, self.stride).max(axis=(3, 4))


@dataclass(eq=False)
class Flatten:
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(-1)


@dataclass(eq=False)
class Softmax:
    kind = "softmax"

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise SchemaError(f"softmax needs a vector input, got {in_shape}")
        return tuple(in_shape)

    def forward(self, x):
        return softmax(x)


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)))


def pool_windows(x, kh, kw, stride):
    """View of shape (Ho, Wo, C, kh, kw) over pooling windows."""
    v = sliding_window_view(x, (kh, kw), axis=(0, 1))
    return v[::stride, ::stride]


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Cross-correlation of an (H, W, Cin) input with (Cout, Cin, Kh, Kw) filters."""
    cout, cin, kh, kw = weight.shape
    xp = pad_hw(x, pad)
    cols = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    # cols: (Ho, Wo, Cin, Kh, Kw)
    out = np.tensordot(cols, weight, axes=([2, 3, 4], [1, 2, 3]))
    if bias is not None:
        out = out + bias
    return out


@dataclass(eq=False)
class Network:
    layers: list
    input_shape: tuple
    class_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not self.layers:
            raise SchemaError("a network needs at least one layer")
        self.shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            try:
                self.shapes.append(layer.output_shape(self.shapes[-1]))
            except SchemaError as exc:
                raise SchemaError(f"layer {i} ({layer.kind}): {exc}") from None
        n_out = int(np.prod(self.shapes[-1]))
        if self.class_labels and len(self.class_labels) != n_out:
            raise SchemaError(f"{len(self.class_labels)} labels for {n_out} outputs")

    def __len__(self):
        return len(self.layers)

    @property
    def output_size(self):
        return int(np.prod(self.shapes[-1]))

    def label(self, index):
        if self.class_labels:
            return self.class_labels[index]
        return str(index)


@dataclass(eq=False)
class ForwardTrace:
    inputs: list
    outputs: list

    @property
    def output(self):
        """The network's final vector f(x)."""
        return self.outputs[-1].reshape(-1)

    def __len__(self):
        return len(self.inputs)


def forward(net, img):
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, :, None]
    if tuple(x.shape) != net.input_shape:
        raise InvalidArgumentError(f"input shape {tuple(x.shape)} does not match network input {net.input_shape}")
    inputs, outputs = [], []
    for layer in net.layers:
        inputs.append(x)
        x = layer.forward(x)
        outputs.append(x)
    return ForwardTrace(inputs, outputs)


def predict(net, img):
    """Return ``(class_index, score)`` of the arg-max output; ties go to the lowest index."""
    out = forward(net, img).output
    k = int(np.argmax(out))
    return k, float(out[k])


# --------------------------------------------------------------------------
# manifest + weight blob


def _parse_kv(tokens, lineno):
    kv = {}
    for tok in tokens:
        if "=" not in tok:
            raise SchemaError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        try:
            kv[k] = int(v)
        except ValueError:
            raise SchemaError(f"line {lineno}: {k} must be an integer, got {v!r}") from None
    return kv


def _require(kv, keys, lineno, kind):
    missing = [k for k in keys if k not in kv]
    if missing:
        raise SchemaError(f"line {lineno}: {kind} is missing {', '.join(missing)}")


def parse_manifest(text):
    """Parse manifest text into ``(input_shape, labels, layer_decls)``.

    Each layer declaration is ``(kind, params, lineno)``.
    """
    input_shape, labels, decls = None, [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        head = head.lower()
        if head == "input":
            kv = _parse_kv(rest, lineno)
            _require(kv, ("h", "w", "c"), lineno, "input")
            input_shape = (kv["h"], kv["w"], kv["c"])
        elif head == "labels":
            labels = [s.strip() for s in " ".join(rest).split(",") if s.strip()]
        elif head in ("conv2d", "dense", "relu", "maxpool", "flatten", "softmax"):
            decls.append((head, _parse_kv(rest, lineno), lineno))
        else:
            raise SchemaError(f"line {lineno}: unknown directive {head!r}")
    if input_shape is None:
        raise SchemaError("manifest has no 'input' line")
    return input_shape, labels, decls


def _param_counts(input_shape, decls):
    """Resolve weight/bias shapes layer by layer; returns list of (weight_shape, bias_len)."""
    shape = tuple(input_shape)
    plan = []
    for kind, kv, lineno in decls:
        where = f"line {lineno} ({kind})"
        if kind == "conv2d":
            _require(kv, ("out", "kh", "kw"), lineno, kind)
            if len(shape) != 3:
                raise SchemaError(f"{where}: needs an (H, W, C) input, got {shape}")
            stride, pad = kv.get("stride", 1), kv.get("pad", 0)
            if stride < 1 or kv["kh"] < 1 or kv["kw"] < 1 or kv["out"] < 1 or pad < 0:
                raise SchemaError(f"{where}: sizes must be positive")
            wshape = (kv["out"], shape[2], kv["kh"], kv["kw"])
            bias = kv["out"] if kv.get("bias", 1) else 0
            layer = Conv2D(np.zeros(wshape), None, stride, pad)
        elif kind == "dense":
            _require(kv, ("out",), lineno, kind)
            n_in = int(np.prod(shape))
            if "in" in kv and kv["in"] != n_in:
                raise SchemaError(f"{where}: declares in={kv['in']} but receives {n_in} values")
            wshape = (kv["out"], n_in)
            bias = kv["out"] if kv.get("bias", 1) else 0
            layer = Dense(np.zeros(wshape))
        elif kind == "maxpool":
            _require(kv, ("kh", "kw"), lineno, kind)
            stride = kv.get("stride", kv["kh"])
            if stride < 1 or kv["kh"] < 1 or kv["kw"] < 1:
                raise SchemaError(f"{where}: sizes must be positive")
            wshape, bias = None, 0
            layer = MaxPool2D(kv["kh"], kv["kw"], stride)
        else:
            wshape, bias = None, 0
            layer = {"relu": ReLU, "flatten": Flatten, "softmax": Softmax}[kind]()
        try:
            shape = layer.output_shape(shape)
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        plan.append((kind, kv, wshape, bias))
    return plan


def load_network(manifest_path, weights_path):
    manifest_path, weights_path = Path(manifest_path), Path(weights_path)
    input_shape, labels, decls = parse_manifest(manifest_path.read_text())
    plan = _param_counts(input_shape, decls)
    expected = sum(int(np.prod(ws)) + b for _, _, ws, b in plan if ws is not None)
    try:
        blob = weights_path.read_bytes()
    except OSError as exc:
        raise WeightFileError(f"cannot read weights file {weights_path}: {exc.strerror}") from None
    if len(blob) % 4:
        raise WeightFileError(f"{weights_path}: size {len(blob)} bytes is not a multiple of 4")
    values = np.frombuffer(blob, dtype="<f4").astype(np.float64)
    if values.size != expected:
        raise WeightFileError(
            f"{weights_path}: expected {expected} values ({4 * expected} bytes), "
            f"found {values.size} ({len(blob)} bytes)"
        )
    layers, pos = [], 0
    for kind, kv, wshape, nb in plan:
        if wshape is not None:
            n = int(np.prod(wshape))
            w = values[pos:pos + n].reshape(wshape)
            pos += n
            b = values[pos:pos + nb].copy() if nb else None
            pos += nb
            if kind == "conv2d":
                layers.append(Conv2D(w.copy(), b, kv.get("stride", 1), kv.get("pad", 0)))
            else:
                layers.append(Dense(w.copy(), b))
        elif kind == "maxpool":
            layers.append(MaxPool2D(kv["kh"], kv["kw"], kv.get("stride", kv["kh"])))
        else:
            layers.append({"relu": ReLU, "flatten": Flatten, "softmax": Softmax}[kind]())
    return Network(layers, input_shape, labels)


def manifest_text(net):
    h, w, c = net.input_shape
    lines = [f"input h={h} w={w} c={c}"]
    if net.class_labels:
        lines.append("labels " + ",".join(net.class_labels))
    for layer in net.layers:
        if isinstance(layer, Conv2D):
            cout, _, kh, kw = layer.weight.shape
            lines.append(f"conv2d out={cout} kh={kh} kw={kw} stride={layer.stride} "
                         f"pad={layer.pad} bias={int(layer.bias is not None)}")
        elif isinstance(layer, Dense):
            lines.append(f"dense out={layer.weight.shape[0]} in={layer.weight.shape[1]} "
                         f"bias={int(layer.bias is not None)}")
        elif isinstance(layer, MaxPool2D):
            lines.append(f"maxpool kh={layer.kh} kw={layer.kw} stride={layer.stride}")
        else:
            lines.append(layer.kind)
    return "\n".join(lines) + "\n"


def weight_blob(net):
    parts = []
    for layer in net.layers:
        if isinstance(layer, (Conv2D, Dense)):
            parts.append(layer.weight.ravel())
            if layer.bias is not None:
                parts.append(np.asarray(layer.bias).ravel())
    if not parts:
        return b""
    return np.concatenate(parts).astype("<f4").tobytes()


def save_network(net, manifest_path, weights_path):
    Path(manifest_path).write_text(manifest_text(net))
    Path(weights_path).write_bytes(weight_blob(net))
