"""Float tensor kernels and the two-conv CNN.

Tensors are numpy arrays in channels-last, row-major layout: images are
(H, W, C) and batches (B, H, W, C). Conv kernels are (kh, kw, C_in, C_out)
and dense weights are (out, in), so a dense layer computes ``W @ x + b``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float32
DEFAULT_INPUT_SHAPE = (64, 64, 1)
DEFAULT_FILTERS = (32, 64)
DEFAULT_HIDDEN = 384
N_CLASSES = 2


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation; accepts (H, W, C) or (B, H, W, C)."""
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if x.shape[3] != cin:
        raise ValueError(f"input has {x.shape[3]} channels, kernels expect {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} kernels")
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ValueError(f"input {x.shape[1:3]} smaller than kernel {(kh, kw)}")
    patches = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (B, Ho, Wo, C, kh, kw)
    out = np.tensordot(patches, kernels.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))
    out += bias
    return out[0] if single else out


def maxpool2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max pool; an odd trailing row/column is dropped."""
    single = x.ndim == 3
    if single:
        x = x[None]
    b, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"maxpool2 needs H, W >= 2, got {(h, w)}")
    ho, wo = h // 2, w // 2
    out = x[:, :2 * ho, :2 * wo].reshape(b, ho, 2, wo, 2, c).max(axis=(2, 4))
    return out[0] if single else out


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[0],):
        raise ValueError(f"dense: bias shape {bias.shape} does not match {weights.shape[0]} outputs")
    return x @ weights.T + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis, evaluated in float64."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


ACTIVATIONS = ("none", "relu", "softmax")


@dataclass
class Conv2D:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def output_shape(self, shape):
        kh, kw, cin, cout = self.weights.shape
        if shape[2] != cin:
            raise ValueError(f"conv expects {cin} input channels, got {shape}")
        if shape[0] < kh or shape[1] < kw:
            raise ValueError(f"conv input {shape} smaller than kernel")
        return (shape[0] - kh + 1, shape[1] - kw + 1, cout)


@dataclass
class MaxPool2D:
    activation: str = "none"

    def output_shape(self, shape):
        if shape[0] < 2 or shape[1] < 2:
            raise ValueError(f"maxpool input {shape} too small")
        return (shape[0] // 2, shape[1] // 2, shape[2])


@dataclass
class Flatten:
    activation: str = "none"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


@dataclass
class Dense:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def output_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.weights.shape[1]:
            raise ValueError(f"dense expects ({self.weights.shape[1]},) input, got {shape}")
        return (self.weights.shape[0],)


Layer = Union[Conv2D, MaxPool2D, Flatten, Dense]


@dataclass
class Model:
    layers: list
    input_shape: tuple = DEFAULT_INPUT_SHAPE
    seed: Optional[int] = None

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.boundary_shapes()

    def boundary_shapes(self) -> list[tuple]:
        """Activation shapes: the input, then each layer's output."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if isinstance(layer, (Conv2D, Dense)):
                out.extend([layer.weights, layer.bias])
        return out

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def payload_bytes(self) -> int:
        return int(sum(p.nbytes for p in self.parameters()))

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        for layer in m.layers:
            if isinstance(layer, (Conv2D, Dense)):
                layer.weights = layer.weights.astype(dtype)
                layer.bias = layer.bias.astype(dtype)
        return m


def build_model(input_shape: Sequence[int], spec: Sequence[tuple], seed: int = 0,
                dtype=DTYPE) -> Model:
    """Build from a compact layer list with He-normal weights and zero biases.

    ``spec`` items: ("conv", filters[, kernel]), ("pool",), ("flatten",),
    ("dense", units, activation).
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers: list = []
    for item in spec:
        kind = item[0]
        if kind == "conv":
            k = item[2] if len(item) > 2 else 3
            fan_in = k * k * shape[2]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(k, k, shape[2], item[1]))
            layer = Conv2D(w.astype(dtype), np.zeros(item[1], dtype), "relu")
        elif kind == "pool":
            layer = MaxPool2D()
        elif kind == "flatten":
            layer = Flatten()
        elif kind == "dense":
            act = item[2] if len(item) > 2 else "relu"
            w = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=(item[1], shape[0]))
            layer = Dense(w.astype(dtype), np.zeros(item[1], dtype), act)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Model(layers, tuple(input_shape), seed)


def default_spec(filters=DEFAULT_FILTERS, hidden=DEFAULT_HIDDEN) -> list[tuple]:
    return [("conv", filters[0]), ("pool",), ("conv", filters[1]), ("pool",), ("flatten",),
            ("dense", hidden, "relu"), ("dense", N_CLASSES, "softmax")]


DEFAULT_BOUNDARIES = [(64, 64, 1), (62, 62, 32), (31, 31, 32), (29, 29, 64), (14, 14, 64),
                      (12544,), (384,), (2,)]


def build_default_model(seed: int = 0, hidden: int = DEFAULT_HIDDEN) -> Model:
    model = build_model(DEFAULT_INPUT_SHAPE, default_spec(hidden=hidden), seed)
    if hidden == DEFAULT_HIDDEN:
        assert model.boundary_shapes() == DEFAULT_BOUNDARIES, model.boundary_shapes()
    return model


def apply_activation(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(x)
    if activation == "softmax":
        return softmax(x)
    return x


def as_batch(model: Model, batch: np.ndarray) -> np.ndarray:
    """Accept one image or a batch, with or without a trailing unit channel axis."""
    x = np.asarray(batch)
    shape = model.input_shape
    if x.shape == shape:
        x = x[None]
    elif shape[-1] == 1 and x.shape == shape[:-1]:
        x = x[None, ..., None]
    elif shape[-1] == 1 and x.shape[1:] == shape[:-1]:
        x = x[..., None]
    if x.shape[1:] != shape:
        raise ValueError(f"batch shape {np.shape(batch)} does not match model input {shape}")
    return x


def forward_logits(model: Model, batch: np.ndarray) -> np.ndarray:
    x = as_batch(model, batch).astype(model.parameters()[0].dtype, copy=False)
    for layer in model.layers:
        if isinstance(layer, Conv2D):
            x = apply_activation(conv2d(x, layer.weights, layer.bias), layer.activation)
        elif isinstance(layer, MaxPool2D):
            x = maxpool2(x)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        elif layer.activation == "softmax":
            x = dense(x, layer.weights, layer.bias)
        else:
            x = apply_activation(dense(x, layer.weights, layer.bias), layer.activation)
    return x


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (B, n_classes)."""
    return softmax(forward_logits(model, batch))


def predict(model: Model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Stress-class probabilities for a stack of images, processed in chunks."""
    x = as_batch(model, images)
    out = [forward(model, x[i:i + batch_size])[:, 1] for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(0)
