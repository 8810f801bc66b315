"""Integer-only inference over a QuantModel, arena planning and budget gating.

Integer convolutions and matmuls are evaluated in float64 on integer-valued
operands. Every partial sum is an integer far below 2**53, so the result is
exact and independent of BLAS summation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .compress import INT8_MAX, INT8_MIN, QuantModel
from .model import Conv2D, Dense, Flatten, MaxPool2D, Model, softmax

DEFAULT_FLASH_BUDGET = 2_000_000
DEFAULT_RAM_BUDGET = 512_000


@dataclass(frozen=True)
class RequantParams:
    multiplier: float
    zero_point: int = 0

    def __post_init__(self):
        if not self.multiplier > 0:
            raise ValueError(f"requantization multiplier must be positive, got {self.multiplier}")


def requantize(acc, p: RequantParams):
    """clamp(round_half_even(acc * M) + zp, -128, 127)."""
    scaled = np.rint(np.asarray(acc, dtype=np.float64) * p.multiplier) + p.zero_point
    out = np.clip(scaled, INT8_MIN, INT8_MAX).astype(np.int8)
    return out if out.ndim else int(out)


def _int_conv(q: np.ndarray, w: np.ndarray) -> np.ndarray:
    kh, kw = w.shape[:2]
    patches = sliding_window_view(q, (kh, kw), axis=(1, 2))
    return np.tensordot(patches, w.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))


def quantize_input(qm: QuantModel, images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    shape = tuple(qm.input_shape)
    if x.shape == shape or (shape[-1] == 1 and x.shape == shape[:-1]):
        x = x.reshape((1,) + shape)
    elif shape[-1] == 1 and x.shape[1:] == shape[:-1]:
        x = x[..., None]
    if x.shape[1:] != shape:
        raise ValueError(f"image shape {np.shape(images)} does not match model input {shape}")
    scale, zp = qm.act_params[0]
    return np.clip(np.rint(x / scale) + zp, INT8_MIN, INT8_MAX).astype(np.int8)


def qforward_logits(qm: QuantModel, images) -> np.ndarray:
    """Dequantized int8 logits for one image or a batch."""
    q = quantize_input(qm, images)
    for i, layer in enumerate(qm.layers):
        s_in, zp_in = qm.act_params[i]
        s_out, zp_out = qm.act_params[i + 1]
        if layer.kind == "pool":
            b, h, w, c = q.shape
            q = q[:, :h // 2 * 2, :w // 2 * 2].reshape(b, h // 2, 2, w // 2, 2, c).max(axis=(2, 4))
            continue
        if layer.kind == "flatten":
            q = q.reshape(q.shape[0], -1)
            continue
        centered = q.astype(np.float64) - zp_in
        w = layer.weights.q.astype(np.float64)
        if layer.kind == "conv":
            acc = _int_conv(centered, w)
        else:
            acc = centered @ w.T
        acc += layer.bias.q.astype(np.float64)
        m = RequantParams(s_in * layer.weights.scale / s_out, zp_out)
        q = requantize(acc, m)
        if layer.activation == "relu":
            q = np.maximum(q, np.int8(max(zp_out, INT8_MIN)))
    s_out, zp_out = qm.act_params[-1]
    return (q.astype(np.float64) - zp_out) * s_out


def qforward(qm: QuantModel, images) -> np.ndarray:
    """Class probabilities from the integer engine, shape (B, n_classes)."""
    return softmax(qforward_logits(qm, images))


def qpredict(qm: QuantModel, images, batch_size: int = 64) -> np.ndarray:
    images = np.asarray(images)
    out = [qforward(qm, images[i:i + batch_size])[:, 1] for i in range(0, images.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------- memory planning

@dataclass
class MemoryPlan:
    buffer_bytes: list
    peak_bytes: int
    flash_bytes: int
    container_bytes: int = 0
    transitions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "buffer_bytes": list(self.buffer_bytes),
            "peak_bytes": self.peak_bytes,
            "flash_bytes": self.flash_bytes,
            "container_bytes": self.container_bytes,
            "transitions": list(self.transitions),
        }


def _graph(model) -> list[str]:
    if isinstance(model, QuantModel):
        return [layer.kind for layer in model.layers]
    kinds = {Conv2D: "conv", MaxPool2D: "pool", Flatten: "flatten", Dense: "dense"}
    return [kinds[type(layer)] for layer in model.layers]


def plan_memory(model: Union[Model, QuantModel]) -> MemoryPlan:
    """Activation arena and flash payload derived from shapes and dtypes only.

    Each layer holds its input and output buffers live at once, except that
    flatten aliases its input and 2x2 max-pool runs in place (every output
    element is written at or before the lowest position it reads from).
    Flash counts tensor payload bytes; ``container_bytes`` is the full file.
    """
    from .fileformat import serialized_size

    act_bytes = 1 if isinstance(model, QuantModel) else 4
    shapes = model.boundary_shapes()
    sizes = [int(np.prod(s)) * act_bytes for s in shapes]
    kinds = _graph(model)

    buffers = [sizes[0]]
    transitions = []
    for kind, s_in, s_out in zip(kinds, sizes[:-1], sizes[1:]):
        if kind == "flatten":
            transitions.append(s_in)
            continue
        buffers.append(s_out)
        transitions.append(max(s_in, s_out) if kind == "pool" else s_in + s_out)
    peak = max(transitions + [max(buffers)])
    return MemoryPlan(buffers, int(peak), model.payload_bytes(), serialized_size(model), transitions)


@dataclass(frozen=True)
class Budget:
    flash_bytes: int = DEFAULT_FLASH_BUDGET
    ram_bytes: int = DEFAULT_RAM_BUDGET

    def __post_init__(self):
        if self.flash_bytes <= 0 or self.ram_bytes <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class BudgetReport:
    flash_bytes: int
    flash_budget: int
    ram_peak_bytes: int
    ram_budget: int
    passed: bool
    flash_margin: int
    ram_margin: int

    def to_dict(self) -> dict:
        return {
            "flash_bytes": self.flash_bytes,
            "flash_budget": self.flash_budget,
            "ram_peak_bytes": self.ram_peak_bytes,
            "ram_budget": self.ram_budget,
            "pass": self.passed,
            "margins": {"flash": self.flash_margin, "ram": self.ram_margin},
            "ram_scope": "tensor arena only (no stack or runtime overhead)",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_budget(plan: MemoryPlan, budget: Budget = Budget()) -> BudgetReport:
    flash_margin = budget.flash_bytes - plan.flash_bytes
    ram_margin = budget.ram_bytes - plan.peak_bytes
    return BudgetReport(plan.flash_bytes, budget.flash_bytes, plan.peak_bytes, budget.ram_bytes,
                        flash_margin >= 0 and ram_margin >= 0, flash_margin, ram_margin)
