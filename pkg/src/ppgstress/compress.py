"""Structured unit pruning and int8 post-training quantization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import Conv2D, Dense, Flatten, MaxPool2D, Model, as_batch, conv2d, dense, maxpool2

INT8_MIN, INT8_MAX = -128, 127
INT32_MIN, INT32_MAX = -(2 ** 31), 2 ** 31 - 1
DEFAULT_KEEP = 128


@dataclass(frozen=True)
class PruneConfig:
    keep: int = DEFAULT_KEEP


def _hidden_dense_pair(model: Model) -> tuple[int, int]:
    dense_idx = [i for i, layer in enumerate(model.layers) if isinstance(layer, Dense)]
    if len(dense_idx) < 2:
        raise ValueError("pruning needs a hidden dense layer followed by an output dense layer")
    return dense_idx[-2], dense_idx[-1]


def unit_norms(weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """L2 norm of each unit's incoming weights together with its bias."""
    w = weights.astype(np.float64)
    return np.sqrt(np.sum(w * w, axis=1) + bias.astype(np.float64) ** 2)


def select_units(norms: np.ndarray, keep: int) -> np.ndarray:
    # Stable sort on -norm breaks ties toward the lower index; result keeps original order.
    order = np.argsort(-norms, kind="stable")
    return np.sort(order[:keep])


def prune_dense_units(model: Model, cfg: PruneConfig = PruneConfig()) -> Model:
    """Keep the ``cfg.keep`` strongest hidden units, returning a smaller dense model."""
    hi, oi = _hidden_dense_pair(model)
    hidden, out = model.layers[hi], model.layers[oi]
    width = hidden.weights.shape[0]
    if not 1 <= cfg.keep <= width:
        raise ValueError(f"keep must be in [1, {width}], got {cfg.keep}")
    pruned = model.copy()
    if cfg.keep == width:
        return pruned
    kept = select_units(unit_norms(hidden.weights, hidden.bias), cfg.keep)
    ph, po = pruned.layers[hi], pruned.layers[oi]
    ph.weights = np.ascontiguousarray(hidden.weights[kept])
    ph.bias = np.ascontiguousarray(hidden.bias[kept])
    po.weights = np.ascontiguousarray(out.weights[:, kept])
    pruned.boundary_shapes()
    return pruned


# ---------------------------------------------------------------- calibration

def boundary_activations(model: Model, batch: np.ndarray) -> list[np.ndarray]:
    """Activations at every layer boundary; the last one is the logits."""
    x = as_batch(model, batch).astype(model.parameters()[0].dtype, copy=False)
    acts = [x]
    for layer in model.layers:
        if isinstance(layer, Conv2D):
            x = conv2d(x, layer.weights, layer.bias)
            if layer.activation == "relu":
                x = np.maximum(x, 0)
        elif isinstance(layer, MaxPool2D):
            x = maxpool2(x)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        else:
            x = dense(x, layer.weights, layer.bias)
            if layer.activation == "relu":
                x = np.maximum(x, 0)
        acts.append(x)
    return acts


def observe_ranges(model: Model, images, batch_size: int = 64) -> list[tuple[float, float]]:
    """Raw (min, max) per boundary over a calibration set."""
    images = np.asarray(images)
    if images.shape[0] == 0:
        raise ValueError("empty calibration set")
    lo = hi = None
    for i in range(0, images.shape[0], batch_size):
        acts = boundary_activations(model, images[i:i + batch_size])
        mins = np.array([float(a.min()) for a in acts])
        maxs = np.array([float(a.max()) for a in acts])
        lo = mins if lo is None else np.minimum(lo, mins)
        hi = maxs if hi is None else np.maximum(hi, maxs)
    return [(float(a), float(b)) for a, b in zip(lo, hi)]


def widen_range(lo: float, hi: float) -> tuple[float, float]:
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if lo == hi:
        return (0.0, 1.0)
    return (lo, hi)


def calibrate(model: Model, images, batch_size: int = 64) -> list[tuple[float, float]]:
    """Per-boundary ranges widened to contain 0; a degenerate [0, 0] becomes [0, 1]."""
    return [widen_range(lo, hi) for lo, hi in observe_ranges(model, images, batch_size)]


# ---------------------------------------------------------------- quantization

@dataclass
class QTensor:
    q: np.ndarray
    scale: float
    zero_point: int = 0

    def dequantize(self) -> np.ndarray:
        return (self.q.astype(np.float64) - self.zero_point) * self.scale


def quantize_tensor(values, mode: str = "symmetric", value_range: Optional[tuple] = None) -> QTensor:
    """Per-tensor int8 quantization with round-half-to-even.

    symmetric: scale = max|x| / 127, zero point 0.
    affine: scale = (max - min) / 255, zero point = round(-min / scale) - 128,
    using ``value_range`` when given, else the data's own min and max.
    """
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    if mode == "symmetric":
        amax = float(np.max(np.abs(x))) if x.size else 0.0
        scale = amax / 127.0 if amax > 0 else 1.0
        zp = 0
    elif mode == "affine":
        if value_range is None:
            value_range = (float(x.min()), float(x.max())) if x.size else (0.0, 0.0)
        lo, hi = value_range
        if hi > lo:
            scale = (hi - lo) / 255.0
            zp = int(np.clip(np.rint(-lo / scale) - 128, INT8_MIN, INT8_MAX))
        else:
            scale, zp = 1.0, 0
    else:
        raise ValueError(f"unknown quantization mode {mode!r}")
    q = np.clip(np.rint(x / scale) + zp, INT8_MIN, INT8_MAX).astype(np.int8)
    return QTensor(q, float(scale), int(zp))


def quantize_bias(bias, scale: float) -> QTensor:
    q = np.clip(np.rint(np.asarray(bias, dtype=np.float64) / scale), INT32_MIN, INT32_MAX)
    return QTensor(q.astype(np.int32), float(scale), 0)


@dataclass
class QuantLayer:
    kind: str  # conv | pool | flatten | dense
    activation: str = "none"
    weights: Optional[QTensor] = None
    bias: Optional[QTensor] = None


@dataclass
class QuantModel:
    layers: list
    input_shape: tuple
    ranges: list  # calibrated (min, max) per boundary
    act_params: list = field(default_factory=list)  # (scale, zero_point) per boundary

    def boundary_shapes(self) -> list[tuple]:
        shapes = [tuple(self.input_shape)]
        for layer in self.layers:
            h = shapes[-1]
            if layer.kind == "conv":
                kh, kw, _, cout = layer.weights.q.shape
                shapes.append((h[0] - kh + 1, h[1] - kw + 1, cout))
            elif layer.kind == "pool":
                shapes.append((h[0] // 2, h[1] // 2, h[2]))
            elif layer.kind == "flatten":
                shapes.append((int(np.prod(h)),))
            else:
                shapes.append((layer.weights.q.shape[0],))
        return shapes

    def tensors(self) -> list[QTensor]:
        out = []
        for layer in self.layers:
            if layer.weights is not None:
                out.extend([layer.weights, layer.bias])
        return out

    def param_count(self) -> int:
        return int(sum(t.q.size for t in self.tensors()))

    def payload_bytes(self) -> int:
        return int(sum(t.q.nbytes for t in self.tensors()))


def activation_params(ranges: list, layers: list) -> list[tuple[float, int]]:
    """(scale, zero_point) per boundary. Pool and flatten outputs reuse their
    input's parameters so they run directly on int8 data."""
    params = []
    for i, (lo, hi) in enumerate(ranges):
        if i > 0 and layers[i - 1].kind in ("pool", "flatten"):
            params.append(params[-1])
            continue
        t = quantize_tensor(np.zeros(0), "affine", widen_range(lo, hi))
        params.append((t.scale, t.zero_point))
    return params


def quantize_ptq(model: Model, ranges: list) -> QuantModel:
    """Post-training quantization of a float model given calibrated ranges."""
    if ranges is None or len(ranges) != len(model.layers) + 1:
        got = 0 if ranges is None else len(ranges)
        raise ValueError(f"missing range: need {len(model.layers) + 1} boundary ranges, got {got}")
    layers = []
    for layer in model.layers:
        if isinstance(layer, Conv2D):
            layers.append(QuantLayer("conv", layer.activation))
        elif isinstance(layer, MaxPool2D):
            layers.append(QuantLayer("pool"))
        elif isinstance(layer, Flatten):
            layers.append(QuantLayer("flatten"))
        else:
            layers.append(QuantLayer("dense", layer.activation))
    ranges = [widen_range(float(lo), float(hi)) for lo, hi in ranges]
    act = activation_params(ranges, layers)
    for i, (layer, ql) in enumerate(zip(model.layers, layers)):
        if isinstance(layer, (Conv2D, Dense)):
            ql.weights = quantize_tensor(layer.weights, "symmetric")
            ql.bias = quantize_bias(layer.bias, act[i][0] * ql.weights.scale)
    return QuantModel(layers, tuple(model.input_shape), ranges, act)
