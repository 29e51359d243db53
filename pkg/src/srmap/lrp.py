"""Epsilon-rule layer-wise relevance propagation.

The message from output neuron j to input i is

    R_{j->i} = w_ij * x_i / (z_j + eps * sign(z_j)) * R_j,   z_j = sum_k w_kj * x_k

with sign(0) taken as +1.  Biases do not enter z_j and receive no
relevance.  ReLU, Flatten and Softmax layers pass relevance through
unchanged; max-pooling hands each window's relevance to its arg-max.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import netrt
from .errors import InvalidArgumentError, UnsupportedOperationError

DEFAULT_EPSILON = 1e-9


@dataclass(eq=False)
class RelevanceState:
    """Relevance at every layer boundary.

    ``relevances[l]`` has the shape of layer ``l``'s input; the extra last
    entry is the initial output relevance.  ``layer_sums`` is aligned.
    """

    relevances: list
    epsilon: float
    source_score: float

    @property
    def layer_sums(self):
        return [float(r.sum()) for r in self.relevances]


@dataclass(eq=False)
class PixelRelevanceMap:
    values: np.ndarray  # (H, W)
    source_class: int
    source_score: float


def _stabilize(z, epsilon):
    den = z + epsilon * np.where(z >= 0, 1.0, -1.0)
    # only reachable with epsilon == 0; every numerator is then zero too
    safe = den != 0
    return np.where(safe, den, 1.0), safe


def init_relevance(trace, class_index, start="probability", net=None):
    """Zero vector except ``class_index``, which carries the retained score.

    ``start="probability"`` uses the network's final output (post-softmax when
    the last layer is a softmax).  ``start="logit"`` uses the softmax input
    instead; it needs ``net`` to know whether a softmax is present.
    """
    out = trace.output
    if not 0 <= class_index < out.size:
        raise InvalidArgumentError(f"class index {class_index} outside [0, {out.size})")
    if start == "logit":
        if net is not None and isinstance(net.layers[-1], netrt.Softmax):
            out = trace.inputs[-1].reshape(-1)
    elif start != "probability":
        raise InvalidArgumentError(f"unknown relevance start {start!r}")
    r = np.zeros(out.size)
    r[class_index] = out[class_index]
    return r


def lrp_linear(weights, input_activations, R_out, epsilon=DEFAULT_EPSILON):
    """Relevance of a dense map ``z = weights @ x``; ``weights`` is (out, in)."""
    W = np.asarray(weights, dtype=np.float64)
    x = np.asarray(input_activations, dtype=np.float64)
    R = np.asarray(R_out, dtype=np.float64).reshape(-1)
    if W.ndim != 2 or W.shape[1] != x.size or W.shape[0] != R.size:
        raise InvalidArgumentError(
            f"lrp_linear shapes do not compose: weights {W.shape}, input {x.shape}, relevance {R.shape}")
    if epsilon < 0:
        raise InvalidArgumentError("epsilon must be non-negative")
    xf = x.reshape(-1)
    den, safe = _stabilize(W @ xf, epsilon)
    s = np.where(safe, R / den, 0.0)
    return (xf * (W.T @ s)).reshape(x.shape)


def _conv_backward_input(s, weight, in_shape, stride, pad):
    """Transpose of the bias-free convolution applied to ``s`` (Ho, Wo, Cout)."""
    cout, cin, kh, kw = weight.shape
    h, w, _ = in_shape
    ho, wo, _ = s.shape
    cols = np.tensordot(s, weight, axes=([2], [0]))  # (Ho, Wo, Cin, Kh, Kw)
    out = np.zeros((h + 2 * pad, w + 2 * pad, cin))
    for i in range(kh):
        for j in range(kw):
            out[i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols[:, :, :, i, j]
    return out[pad:pad + h, pad:pad + w, :]


def lrp_conv(layer, input_activations, R_out, epsilon=DEFAULT_EPSILON):
    """Epsilon rule for a convolution, each output position acting as a linear neuron."""
    x = np.asarray(input_activations, dtype=np.float64)
    R = np.asarray(R_out, dtype=np.float64)
    try:
        expected = layer.output_shape(x.shape)
    except Exception as exc:
        raise InvalidArgumentError(f"lrp_conv: {exc}") from None
    if tuple(R.shape) != tuple(expected):
        raise InvalidArgumentError(f"lrp_conv: relevance shape {R.shape} != layer output {expected}")
    if epsilon < 0:
        raise InvalidArgumentError("epsilon must be non-negative")
    z = netrt.conv2d(x, layer.weight, None, layer.stride, layer.pad)
    den, safe = _stabilize(z, epsilon)
    s = np.where(safe, R / den, 0.0)
    c = _conv_backward_input(s, layer.weight, x.shape, layer.stride, layer.pad)
    return x * c


def lrp_maxpool(layer, input_activations, R_out):
    """Winner-take-all: each window's relevance goes to its first arg-max."""
    x = np.asarray(input_activations, dtype=np.float64)
    R = np.asarray(R_out, dtype=np.float64)
    try:
        expected = layer.output_shape(x.shape)
    except Exception as exc:
        raise InvalidArgumentError(f"lrp_maxpool: {exc}") from None
    if tuple(R.shape) != tuple(expected):
        raise InvalidArgumentError(f"lrp_maxpool: relevance shape {R.shape} != layer output {expected}")
    kh, kw, st = layer.kh, layer.kw, layer.stride
    win = sliding_window_view(x, (kh, kw), axis=(0, 1))[::st, ::st]  # (Ho, Wo, C, kh, kw)
    ho, wo, c = R.shape
    flat = win.reshape(ho, wo, c, kh * kw)
    arg = np.argmax(flat, axis=-1)  # first occurrence = lowest linear index
    di, dj = np.divmod(arg, kw)
    oi, oj, ch = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
    out = np.zeros_like(x)
    np.add.at(out, (oi * st + di, oj * st + dj, ch), R)
    return out


def lrp_passthrough(R_out, in_shape=None):
    """ReLU / Flatten / Softmax: values unchanged, reshaped to ``in_shape`` if given."""
    R = np.asarray(R_out, dtype=np.float64)
    if in_shape is not None:
        return R.reshape(in_shape).copy()
    return R.copy()


def propagate_from(net, trace, R_top, epsilon=DEFAULT_EPSILON):
    """Run the per-layer rules from an arbitrary output relevance ``R_top``."""
    rels = [None] * len(net.layers) + [np.asarray(R_top, dtype=np.float64)]
    R = rels[-1].reshape(trace.outputs[-1].shape)
    for l in range(len(net.layers) - 1, -1, -1):
        layer, x = net.layers[l], trace.inputs[l]
        R = R.reshape(trace.outputs[l].shape)
        if isinstance(layer, netrt.Dense):
            R = lrp_linear(layer.weight, x, R, epsilon)
        elif isinstance(layer, netrt.Conv2D):
            R = lrp_conv(layer, x, R, epsilon)
        elif isinstance(layer, netrt.MaxPool2D):
            R = lrp_maxpool(layer, x, R)
        elif isinstance(layer, (netrt.ReLU, netrt.Flatten, netrt.Softmax)):
            R = lrp_passthrough(R, x.shape)
        else:
            raise UnsupportedOperationError(f"no relevance rule for layer {l} ({type(layer).__name__})")
        rels[l] = R
    return rels


def propagate(net, trace, class_index, epsilon=DEFAULT_EPSILON, start="probability"):
    """Relevance of ``class_index`` down to the input pixels.

    Returns ``(PixelRelevanceMap, RelevanceState)``; the pixel map sums the
    input relevance over channels.
    """
    R_top = init_relevance(trace, class_index, start, net)
    rels = propagate_from(net, trace, R_top, epsilon)
    state = RelevanceState(rels, epsilon, float(R_top[class_index]))
    r_in = rels[0]
    pixel = r_in.sum(axis=2) if r_in.ndim == 3 else r_in.reshape(net.input_shape[:2])
    return PixelRelevanceMap(pixel, int(class_index), state.source_score), state


def conservation_check(state):
    """Per-layer relative residual |sum R^(l) - score| / max(|score|, 1e-12)."""
    floor = max(abs(state.source_score), 1e-12)
    return [abs(s - state.source_score) / floor for s in state.layer_sums]
