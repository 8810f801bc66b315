"""Cross-entropy loss, backpropagation, Adam and the augmented epoch loop."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import Conv2D, Dense, Flatten, MaxPool2D, Model, as_batch, conv2d, dense, forward, softmax
from .scalogram import AugmentParams, ScalogramImage, augment

LOSS_CLAMP = 1e-12


def crossentropy(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], LOSS_CLAMP)))


def mean_crossentropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p, LOSS_CLAMP))))


def _forward_cached(model: Model, x: np.ndarray):
    """Forward pass that keeps each layer's input and pre-activation."""
    cache = []
    for layer in model.layers:
        if isinstance(layer, Conv2D):
            z = conv2d(x, layer.weights, layer.bias)
            cache.append((x, z))
            x = np.maximum(z, 0) if layer.activation == "relu" else z
        elif isinstance(layer, MaxPool2D):
            cache.append((x, None))
            b, h, w, c = x.shape
            x = x[:, :h // 2 * 2, :w // 2 * 2].reshape(b, h // 2, 2, w // 2, 2, c).max(axis=(2, 4))
        elif isinstance(layer, Flatten):
            cache.append((x, None))
            x = x.reshape(x.shape[0], -1)
        else:
            z = dense(x, layer.weights, layer.bias)
            cache.append((x, z))
            x = np.maximum(z, 0) if layer.activation == "relu" else z
    return x, cache


def _maxpool_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # Gradient goes to the first maximum of each 2x2 block.
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :2 * ho, :2 * wo].reshape(b, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4)
    arg = blocks.reshape(b, ho, wo, c, 4).argmax(axis=-1)
    onehot = (arg[..., None] == np.arange(4)).astype(dy.dtype) * dy[..., None]
    dx = np.zeros_like(x)
    dx[:, :2 * ho, :2 * wo] = (onehot.reshape(b, ho, wo, c, 2, 2)
                               .transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * ho, 2 * wo, c))
    return dx


def _conv_backward(x: np.ndarray, kernels: np.ndarray, dz: np.ndarray):
    kh, kw, cin, cout = kernels.shape
    ho, wo = dz.shape[1], dz.shape[2]
    patches = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    dw = np.tensordot(patches, dz, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
    db = dz.sum(axis=(0, 1, 2))
    dx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + ho, j:j + wo, :] += dz @ kernels[i, j].T
    return dw, db, dx


def loss_and_gradients(model: Model, batch: np.ndarray, labels):
    """Mean cross-entropy, its gradients (aligned with ``model.parameters()``) and the probabilities."""
    x = as_batch(model, batch).astype(model.parameters()[0].dtype, copy=False)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ValueError(f"{x.shape[0]} examples but {labels.shape} labels")
    logits, cache = _forward_cached(model, x)
    probs = softmax(logits)
    n = x.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0
    loss = mean_crossentropy(probs, labels)

    # Fused softmax + cross-entropy at the logits.
    dy = ((probs - onehot) / n).astype(logits.dtype)
    grads: list = []
    for layer, (inp, z) in zip(reversed(model.layers), reversed(cache)):
        if isinstance(layer, (Conv2D, Dense)) and layer.activation == "relu":
            dy = dy * (z > 0)
        if isinstance(layer, Dense):
            grads.append(dy.sum(axis=0))
            grads.append(dy.T @ inp)
            dy = dy @ layer.weights
        elif isinstance(layer, Conv2D):
            dw, db, dy = _conv_backward(inp, layer.weights, dy)
            grads.append(db)
            grads.append(dw)
        elif isinstance(layer, MaxPool2D):
            dy = _maxpool_backward(inp, dy)
        else:
            dy = dy.reshape(inp.shape)
    grads.reverse()
    return loss, grads, probs


def backward(model: Model, batch: np.ndarray, labels) -> list[np.ndarray]:
    """Gradient of the mean cross-entropy w.r.t. every parameter, in ``model.parameters()`` order."""
    return loss_and_gradients(model, batch, labels)[1]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, **hyper)


def adam_step(params: list, grads: list, state: AdamState, names: Optional[list] = None):
    """One bias-corrected Adam update. Returns (new_params, new_state); inputs are not modified."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and moments must align")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ValueError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"tensor {i}"
            raise FloatingPointError(f"non-finite gradient in {label}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, replace(state, m=new_m, v=new_v, t=t)


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0
    augment: Optional[AugmentParams] = field(default_factory=AugmentParams)
    val_split: float = 0.2
    lr: float = 1e-3

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.val_split < 1:
            raise ValueError("validation split must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


@dataclass
class TrainHistory:
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    train_indices: Optional[np.ndarray] = None
    val_indices: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.loss)

    def rows(self):
        return [
            {"epoch": i + 1, "train_acc": a, "val_acc": va, "loss": lo}
            for i, (a, va, lo) in enumerate(zip(self.train_acc, self.val_acc, self.loss))
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["epoch", "train_acc", "val_acc", "loss"],
                                lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"epochs": self.rows()}, indent=2)


def stratified_split(labels, val_fraction: float, seed: int):
    """Per-class random split; returns sorted (train_idx, val_idx)."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(val_fraction * idx.size))
        n_val = min(max(n_val, 1), idx.size - 1)
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _set_parameters(model: Model, params: list):
    it = iter(params)
    for layer in model.layers:
        if isinstance(layer, (Conv2D, Dense)):
            layer.weights = next(it)
            layer.bias = next(it)


def parameter_names(model: Model) -> list[str]:
    names = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, (Conv2D, Dense)):
            names += [f"layer{i}.{type(layer).__name__}.weights", f"layer{i}.{type(layer).__name__}.bias"]
    return names


def evaluate_accuracy(model: Model, images: np.ndarray, labels, batch_size: int = 64) -> float:
    labels = np.asarray(labels)
    correct = 0
    for i in range(0, len(labels), batch_size):
        probs = forward(model, images[i:i + batch_size])
        correct += int(np.sum(probs.argmax(axis=1) == labels[i:i + batch_size]))
    return correct / len(labels)


def train(model: Model, images: np.ndarray, labels, cfg: TrainConfig = TrainConfig()):
    """Train a copy of ``model``; returns (trained_model, history).

    Training accuracy and loss are running means over the epoch's augmented
    batches, measured before each update.
    """
    cfg.validate()
    images = np.asarray(images, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ValueError("training needs at least two classes")
    if counts.min() < 2:
        raise ValueError("training needs at least two examples per class")

    train_idx, val_idx = stratified_split(labels, cfg.val_split, cfg.seed)
    model = model.copy()
    names = parameter_names(model)
    state = AdamState.zeros_like(model.parameters(), lr=cfg.lr)
    history = TrainHistory(train_indices=train_idx, val_indices=val_idx)
    draw = 0
    for epoch in range(cfg.epochs):
        order = train_idx[np.random.default_rng([cfg.seed, epoch]).permutation(train_idx.size)]
        correct, loss_sum = 0, 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = images[idx]
            if cfg.augment is not None:
                batch = np.stack([augment(ScalogramImage(im), cfg.augment, draw + k).pixels
                                  for k, im in enumerate(batch)])
            draw += idx.size
            loss, grads, probs = loss_and_gradients(model, batch, labels[idx])
            params, state = adam_step(model.parameters(), grads, state, names)
            _set_parameters(model, params)
            correct += int(np.sum(probs.argmax(axis=1) == labels[idx]))
            loss_sum += loss * idx.size
        history.train_acc.append(correct / order.size)
        history.loss.append(loss_sum / order.size)
        history.val_acc.append(evaluate_accuracy(model, images[val_idx], labels[val_idx]))
    return model, history
