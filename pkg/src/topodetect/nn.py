"""Small feed-forward network with explicit backpropagation.

Only two layer kinds exist: a "same"-padded 2-D convolution and a dense
layer, each optionally followed by ReLU.  Everything is float64.  Inputs are
single images of shape ``input_shape`` (a grey channel is implied); batched
helpers take a leading batch axis.

The forward pass keeps every pre- and post-activation because the graph
induction step needs them.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Conv",
    "Dense",
    "NetworkModel",
    "ForwardTrace",
    "CrossEntropy",
    "RejectedInputError",
    "ModelFormatError",
    "build_model",
    "scaled_model",
    "reference_model",
    "forward",
    "forward_batch",
    "logits_batch",
    "backward",
    "input_gradient",
    "train",
    "accuracy",
    "save_model",
    "load_model",
    "softmax",
]


class RejectedInputError(ValueError):
    """Input does not fit the model."""


class ModelFormatError(ValueError):
    """Model file is corrupt or written by an unknown format version."""


@dataclass(frozen=True, eq=False)
class Conv:
    filter_count: int
    filter_size: int
    stride: int = 1
    relu: bool = True
    weight: np.ndarray | None = field(default=None, repr=False)  # (F, C, k, k)
    bias: np.ndarray | None = field(default=None, repr=False)  # (F,)

    kind = "conv"

    def __post_init__(self):
        if self.filter_size < 1 or self.stride < 1 or self.filter_count < 1:
            raise ValueError(f"invalid conv layer {self}")


@dataclass(frozen=True, eq=False)
class Dense:
    in_dim: int
    out_dim: int
    relu: bool = True
    weight: np.ndarray | None = field(default=None, repr=False)  # (in, out)
    bias: np.ndarray | None = field(default=None, repr=False)  # (out,)

    kind = "dense"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"invalid dense layer {self}")


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """Return (output size, pad before, pad after) for "same" padding."""
    out = math.ceil(size / stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


@dataclass(frozen=True, eq=False)
class NetworkModel:
    input_shape: tuple[int, int]
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shape = (1,) + self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ValueError(f"layer {i}: conv after dense layer")
                c, h, w = shape
                if layer.weight is not None and layer.weight.shape != (
                    layer.filter_count, c, layer.filter_size, layer.filter_size
                ):
                    raise ValueError(f"layer {i}: conv weight shape {layer.weight.shape}")
                ho = same_padding(h, layer.filter_size, layer.stride)[0]
                wo = same_padding(w, layer.filter_size, layer.stride)[0]
                shape = (layer.filter_count, ho, wo)
            else:
                n_in = int(np.prod(shape))
                if n_in != layer.in_dim:
                    raise ValueError(f"layer {i}: in_dim {layer.in_dim} != {n_in}")
                if layer.weight is not None and layer.weight.shape != (
                    layer.in_dim, layer.out_dim
                ):
                    raise ValueError(f"layer {i}: dense weight shape {layer.weight.shape}")
                shape = (layer.out_dim,)
        if len(shape) != 1:
            raise ValueError("network must end in a dense layer")

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim

    @property
    def interface_shapes(self) -> list[tuple[int, ...]]:
        """Shapes of the input and of every layer output, in order."""
        shapes = [(1,) + self.input_shape]
        for layer in self.layers:
            if layer.kind == "conv":
                _, h, w = shapes[-1]
                shapes.append((
                    layer.filter_count,
                    same_padding(h, layer.filter_size, layer.stride)[0],
                    same_padding(w, layer.filter_size, layer.stride)[0],
                ))
            else:
                shapes.append((layer.out_dim,))
        return shapes

    @property
    def vertex_offsets(self) -> np.ndarray:
        """First global neuron id of every interface (input first)."""
        sizes = [int(np.prod(s)) for s in self.interface_shapes]
        return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    @property
    def neuron_count(self) -> int:
        return int(self.vertex_offsets[-1])

    @property
    def parameter_count(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    input: np.ndarray
    pre: list  # per layer, pre-activation
    post: list  # per layer, post-activation
    logits: np.ndarray
    probabilities: np.ndarray
    predicted: int

    @property
    def activations(self) -> list:
        """Input followed by every post-activation, matching interface_shapes."""
        return [self.input[None]] + list(self.post)


def _truncated_normal(rng, shape, std):
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def build_model(input_shape, layer_specs: Sequence, seed: int = 0, std: float = 0.1) -> NetworkModel:
    """Initialise weights and biases from a truncated normal (cut at 2 std)."""
    rng = np.random.default_rng(seed)
    shape = (1,) + tuple(input_shape)
    layers = []
    for spec in layer_specs:
        if spec.kind == "conv":
            w_shape = (spec.filter_count, shape[0], spec.filter_size, spec.filter_size)
            layer = replace(
                spec,
                weight=_truncated_normal(rng, w_shape, std),
                bias=_truncated_normal(rng, (spec.filter_count,), std),
            )
            _, h, w = shape
            shape = (
                spec.filter_count,
                same_padding(h, spec.filter_size, spec.stride)[0],
                same_padding(w, spec.filter_size, spec.stride)[0],
            )
        else:
            layer = replace(
                spec,
                weight=_truncated_normal(rng, (spec.in_dim, spec.out_dim), std),
                bias=_truncated_normal(rng, (spec.out_dim,), std),
            )
            shape = (spec.out_dim,)
        layers.append(layer)
    return NetworkModel(tuple(input_shape), tuple(layers))


def _conv_mlp(filters, hidden, classes, size, seed):
    h, w = size
    return build_model(
        size,
        [
            Conv(filters, 5, 1),
            Dense(filters * h * w, hidden),
            Dense(hidden, classes, relu=False),
        ],
        seed=seed,
    )


def scaled_model(seed: int = 0, filters: int = 8, hidden: int = 128, classes: int = 10,
                 size=(28, 28)) -> NetworkModel:
    """Desk-scale variant: 8 5x5 filters, 128 hidden units."""
    return _conv_mlp(filters, hidden, classes, size, seed)


def reference_model(seed: int = 0) -> NetworkModel:
    """Full-size architecture: 32 5x5 filters, 25088 -> 1024 -> 10."""
    return _conv_mlp(32, 1024, 10, (28, 28), seed)


# -- forward / backward ----------------------------------------------------


def _conv_geometry(layer: Conv, h: int, w: int):
    k, s = layer.filter_size, layer.stride
    ho, ph0, ph1 = same_padding(h, k, s)
    wo, pw0, pw1 = same_padding(w, k, s)
    return k, s, ho, wo, (ph0, ph1), (pw0, pw1)


def _conv_forward(layer: Conv, x: np.ndarray):
    n, c, h, w = x.shape
    k, s, ho, wo, ph, pw = _conv_geometry(layer, h, w)
    xpad = np.pad(x, ((0, 0), (0, 0), ph, pw))
    windows = sliding_window_view(xpad, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    # im2col: (N*Ho*Wo, C*k*k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    out = cols @ layer.weight.reshape(layer.filter_count, -1).T + layer.bias
    out = out.reshape(n, ho, wo, layer.filter_count).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (xpad.shape, cols)


def _conv_backward(layer: Conv, saved, x_shape, dout, need_params=True):
    pad_shape, cols = saved
    n, c, h, w = x_shape
    k, s, ho, wo, ph, pw = _conv_geometry(layer, h, w)
    f = layer.filter_count
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
    dcols = (dflat @ layer.weight.reshape(f, -1)).reshape(n, ho, wo, c, k, k)
    dxpad = np.zeros(pad_shape)
    for ki in range(k):
        for kj in range(k):
            dxpad[:, :, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += (
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    dx = dxpad[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w]
    if not need_params:
        return dx, None, None
    dw = (dflat.T @ cols).reshape(layer.weight.shape)
    return dx, dw, dflat.sum(axis=0)


def _check_batch(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != model.input_shape:
        raise RejectedInputError(
            f"expected batch of shape (N, {model.input_shape[0]}, {model.input_shape[1]}),"
            f" got {x.shape}"
        )
    return x


def forward_batch(model: NetworkModel, x: np.ndarray):
    """Run a batch through the network.

    Returns ``(pre, post, cache)`` where ``pre``/``post`` are per-layer lists
    with a leading batch axis and ``cache`` feeds :func:`backward`.
    """
    x = _check_batch(model, x)
    h = x[:, None]
    pre, post, cache = [], [], []
    for layer in model.layers:
        if layer.kind == "conv":
            z, saved = _conv_forward(layer, h)
            cache.append((h.shape, saved))
        else:
            flat = h.reshape(len(h), -1)
            z = flat @ layer.weight + layer.bias
            cache.append((h.shape, flat))
        a = np.maximum(z, 0.0) if layer.relu else z
        pre.append(z)
        post.append(a)
        h = a
    return pre, post, cache


def logits_batch(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    return forward_batch(model, x)[1][-1]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: NetworkModel, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise RejectedInputError(f"expected input {model.input_shape}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("input contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise RejectedInputError("input values must lie in [0, 1]")
    pre, post, _ = forward_batch(model, x[None])
    pre = [p[0] for p in pre]
    post = [p[0] for p in post]
    logits = post[-1]
    probs = softmax(logits)
    return ForwardTrace(x, pre, post, logits, probs, int(np.argmax(probs)))


def backward(model: NetworkModel, pre, cache, dlogits: np.ndarray, need_params: bool = True):
    """Backpropagate ``dlogits`` (N, classes).

    Returns ``(param_grads, dinput)`` with ``param_grads`` a list of
    ``(dweight, dbias)`` per layer (``None`` when ``need_params`` is false).
    """
    grads = [None] * len(model.layers)
    g = dlogits
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.relu:
            g = g * (pre[i] > 0)
        in_shape, saved = cache[i]
        if layer.kind == "conv":
            g, dw, db = _conv_backward(layer, saved, in_shape, g, need_params)
        else:
            dw = saved.T @ g if need_params else None
            db = g.sum(axis=0) if need_params else None
            g = (g @ layer.weight.T).reshape(in_shape)
        grads[i] = (dw, db)
    return (grads if need_params else None), g[:, 0]


@dataclass(frozen=True, eq=False)
class CrossEntropy:
    """Softmax cross-entropy against ``label``; summed over a batch."""

    label: int | np.ndarray

    def value_and_grad(self, logits: np.ndarray):
        logits = np.atleast_2d(logits)
        labels = np.broadcast_to(np.asarray(self.label), (len(logits),))
        p = softmax(logits)
        rows = np.arange(len(logits))
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        value = -logp[rows, labels].sum()
        grad = p.copy()
        grad[rows, labels] -= 1.0
        return float(value), grad


def input_gradient(model: NetworkModel, x: np.ndarray, loss) -> np.ndarray:
    """Gradient of ``loss(logits(x))`` with respect to the input image.

    ``loss`` is any object with ``value_and_grad(logits) -> (value, dlogits)``,
    e.g. :class:`CrossEntropy` or :class:`topodetect.adversary.AttackObjective`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise RejectedInputError(f"expected input {model.input_shape}, got {x.shape}")
    pre, post, cache = forward_batch(model, x[None])
    _, dlogits = loss.value_and_grad(post[-1])
    _, dx = backward(model, pre, cache, np.atleast_2d(dlogits), need_params=False)
    return dx[0]


# -- training --------------------------------------------------------------


def accuracy(model: NetworkModel, images: np.ndarray, labels: np.ndarray, batch: int = 500) -> float:
    if len(images) == 0:
        return float("nan")
    hits = 0
    for start in range(0, len(images), batch):
        z = logits_batch(model, images[start:start + batch])
        hits += int((z.argmax(axis=1) == labels[start:start + batch]).sum())
    return hits / len(images)


def train(model: NetworkModel, images: np.ndarray, labels: np.ndarray, *, epochs: int = 15,
          batch_size: int = 128, learning_rate: float = 0.05, seed: int = 0,
          log=None) -> NetworkModel:
    """Minibatch SGD on mean softmax cross-entropy; returns a new model."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise ValueError("empty training set")
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    if labels.min() < 0 or labels.max() >= model.class_count:
        raise ValueError(f"labels must lie in [0, {model.class_count})")
    _check_batch(model, images[:1])

    rng = np.random.default_rng(seed)
    params = [(layer.weight.copy(), layer.bias.copy()) for layer in model.layers]
    current = model
    for epoch in range(epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            pre, post, cache = forward_batch(current, images[idx])
            value, dlogits = CrossEntropy(labels[idx]).value_and_grad(post[-1])
            total += value
            grads, _ = backward(current, pre, cache, dlogits / len(idx))
            for (w, b), (dw, db) in zip(params, grads):
                w -= learning_rate * dw
                b -= learning_rate * db
            current = _with_params(model, params)
        if log is not None:
            log(f"epoch {epoch + 1}/{epochs} loss {total / len(images):.4f}")
    return _with_params(model, [(w.copy(), b.copy()) for w, b in params])


def _with_params(model: NetworkModel, params) -> NetworkModel:
    layers = tuple(replace(layer, weight=w, bias=b) for layer, (w, b) in zip(model.layers, params))
    return NetworkModel(model.input_shape, layers)


# -- persistence -----------------------------------------------------------

MODEL_MAGIC = b"TDNN"
MODEL_VERSION = 1


def save_model(model: NetworkModel, path, metadata: dict | None = None) -> None:
    """Write the model as ``magic | version | header | weights``.

    The header is UTF-8 JSON with the layer specs and optional run
    metadata; weights follow as little-endian float64 arrays in layer order
    (weight then bias).
    """
    layers = []
    for layer in model.layers:
        if layer.kind == "conv":
            layers.append({"kind": "conv", "filter_count": layer.filter_count,
                           "filter_size": layer.filter_size, "stride": layer.stride,
                           "padding": "same", "relu": layer.relu,
                           "weight_shape": list(layer.weight.shape)})
        else:
            layers.append({"kind": "dense", "in_dim": layer.in_dim, "out_dim": layer.out_dim,
                           "relu": layer.relu, "weight_shape": list(layer.weight.shape)})
    header = json.dumps({"input_shape": list(model.input_shape), "layers": layers,
                         "metadata": metadata or {}}, sort_keys=True, default=str).encode()
    blobs = []
    for layer in model.layers:
        blobs.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        blobs.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    payload = b"".join(blobs)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IQQ", MODEL_VERSION, len(header), len(payload)))
        fh.write(header)
        fh.write(payload)


def load_model(path) -> NetworkModel:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise ModelFormatError(f"{path}: truncated header")
    if raw[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (magic {raw[:4]!r})")
    version, header_len, payload_len = struct.unpack("<IQQ", raw[4:24])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    if len(raw) != 24 + header_len + payload_len:
        raise ModelFormatError(f"{path}: truncated or oversized payload")
    try:
        header = json.loads(raw[24:24 + header_len])
    except ValueError as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    offset = 24 + header_len
    layers = []

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        return arr.astype(np.float64)

    for spec in header["layers"]:
        w_shape = tuple(spec["weight_shape"])
        weight = take(w_shape)
        bias = take((w_shape[0],) if spec["kind"] == "conv" else (w_shape[1],))
        if spec["kind"] == "conv":
            layers.append(Conv(spec["filter_count"], spec["filter_size"], spec["stride"],
                               spec["relu"], weight, bias))
        else:
            layers.append(Dense(spec["in_dim"], spec["out_dim"], spec["relu"], weight, bias))
    return NetworkModel(tuple(header["input_shape"]), tuple(layers))
