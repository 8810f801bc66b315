"""SDM1 model container for float and quantized models.

All integers little-endian. Layout::

    "SDM1" | u32 version | u8 quantized | u32 layer_count | u32 input_ndim | u32 dims...
    layer:  u8 type | u8 activation | u32 tensor_count | tensor...
    float tensor:  u32 ndim | u32 dims... | f32 payload
    quant tensor:  u8 dtype | f64 scale | i32 zero_point | u32 ndim | u32 dims... | payload
    quantized files end with: u32 boundary_count | (f64 min, f64 max, f64 scale, i32 zp)...
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .compress import QTensor, QuantLayer, QuantModel
from .model import Conv2D, Dense, Flatten, MaxPool2D, Model

MAGIC = b"SDM1"
VERSION = 1

LAYER_TAGS = {"conv": 1, "pool": 2, "flatten": 3, "dense": 4}
TAG_LAYERS = {v: k for k, v in LAYER_TAGS.items()}
ACT_TAGS = {"none": 0, "relu": 1, "softmax": 2}
TAG_ACTS = {v: k for k, v in ACT_TAGS.items()}
DTYPE_TAGS = {np.dtype(np.int8): 1, np.dtype(np.int32): 2}
TAG_DTYPES = {1: np.dtype("<i1"), 2: np.dtype("<i4")}


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedPayloadError(ModelFormatError):
    pass


def _kind(layer) -> str:
    if isinstance(layer, QuantLayer):
        return layer.kind
    return {Conv2D: "conv", MaxPool2D: "pool", Flatten: "flatten", Dense: "dense"}[type(layer)]


def _float_tensor(arr: np.ndarray) -> bytes:
    return (struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            + np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _quant_tensor(t: QTensor) -> bytes:
    q = t.q
    head = struct.pack("<BdiI", DTYPE_TAGS[q.dtype], t.scale, t.zero_point, q.ndim)
    return head + struct.pack(f"<{q.ndim}I", *q.shape) + np.ascontiguousarray(q, q.dtype.newbyteorder("<")).tobytes()


def serialize(model: Union[Model, QuantModel]) -> bytes:
    quant = isinstance(model, QuantModel)
    shape = tuple(model.input_shape)
    parts = [MAGIC, struct.pack("<IBII", VERSION, int(quant), len(model.layers), len(shape)),
             struct.pack(f"<{len(shape)}I", *shape)]
    for layer in model.layers:
        kind = _kind(layer)
        if quant:
            tensors = [layer.weights, layer.bias] if layer.weights is not None else []
        else:
            tensors = [layer.weights, layer.bias] if kind in ("conv", "dense") else []
        parts.append(struct.pack("<BBI", LAYER_TAGS[kind], ACT_TAGS[layer.activation], len(tensors)))
        for t in tensors:
            parts.append(_quant_tensor(t) if quant else _float_tensor(t))
    if quant:
        parts.append(struct.pack("<I", len(model.ranges)))
        for (lo, hi), (scale, zp) in zip(model.ranges, model.act_params):
            parts.append(struct.pack("<dddi", lo, hi, scale, zp))
    return b"".join(parts)


def serialized_size(model: Union[Model, QuantModel]) -> int:
    """File size computed from the graph alone, without serializing payloads."""
    quant = isinstance(model, QuantModel)
    size = 4 + 13 + 4 * len(model.input_shape)
    for layer in model.layers:
        size += 6
        if quant:
            tensors = [layer.weights.q, layer.bias.q] if layer.weights is not None else []
            for t in tensors:
                size += 17 + 4 * t.ndim + t.nbytes
        elif _kind(layer) in ("conv", "dense"):
            for t in (layer.weights, layer.bias):
                size += 4 + 4 * t.ndim + 4 * t.size
    if quant:
        size += 4 + 28 * len(model.ranges)
    return size


def container_overhead(model: Union[Model, QuantModel]) -> int:
    if isinstance(model, QuantModel):
        payload = sum(t.q.size * t.q.itemsize for t in model.tensors())
    else:
        payload = 4 * model.param_count()
    return serialized_size(model) - payload


def save_model(model: Union[Model, QuantModel], path):
    Path(path).write_bytes(serialize(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedPayloadError(
                f"truncated payload: expected at least {end} bytes, got {len(self.data)}"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize(data: bytes) -> Union[Model, QuantModel]:
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, got {data[:4]!r}")
    r = _Reader(data)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, reader supports {VERSION}")
    quant, n_layers, ndim = r.unpack("<BII")
    input_shape = r.unpack(f"<{ndim}I")

    layers = []
    for _ in range(n_layers):
        tag, act, n_tensors = r.unpack("<BBI")
        if tag not in TAG_LAYERS or act not in TAG_ACTS:
            raise ModelFormatError(f"unknown layer tag {tag} or activation {act}")
        kind, activation = TAG_LAYERS[tag], TAG_ACTS[act]
        tensors = []
        for _ in range(n_tensors):
            if quant:
                dtag, scale, zp, tdim = r.unpack("<BdiI")
                if dtag not in TAG_DTYPES:
                    raise ModelFormatError(f"unknown dtype tag {dtag}")
                dtype = TAG_DTYPES[dtag]
            else:
                (tdim,) = r.unpack("<I")
                dtype = np.dtype("<f4")
            shape = r.unpack(f"<{tdim}I")
            count = int(np.prod(shape)) if tdim else 1
            arr = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
            arr = arr.astype(dtype.newbyteorder("="))
            tensors.append(QTensor(arr, scale, zp) if quant else arr)
        if quant:
            w, b = (tensors + [None, None])[:2]
            layers.append(QuantLayer(kind, activation, w, b))
        elif kind == "conv":
            layers.append(Conv2D(tensors[0], tensors[1], activation))
        elif kind == "dense":
            layers.append(Dense(tensors[0], tensors[1], activation))
        elif kind == "pool":
            layers.append(MaxPool2D())
        else:
            layers.append(Flatten())

    if quant:
        (n_bounds,) = r.unpack("<I")
        ranges, act_params = [], []
        for _ in range(n_bounds):
            lo, hi, scale, zp = r.unpack("<dddi")
            ranges.append((lo, hi))
            act_params.append((scale, zp))
        model = QuantModel(layers, tuple(input_shape), ranges, act_params)
    else:
        model = Model(layers, tuple(input_shape))
    if r.pos != len(data):
        raise ModelFormatError(f"{len(data) - r.pos} trailing bytes after model")
    return model


def load_model(path) -> Union[Model, QuantModel]:
    return deserialize(Path(path).read_bytes())
