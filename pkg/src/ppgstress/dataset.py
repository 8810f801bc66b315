"""Helpers that turn records into labelled scalogram stacks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np

from .ppg import PpgRecord, default_synth_params, segment_windows, synth_ppg
from .scalogram import IMAGE_SIZE, CwtConfig, window_to_image


def record_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synth_records(seed: int, n_records: int = 10, duration_s: float = 59.0) -> list[PpgRecord]:
    """Alternating non-stress / stress records with per-record seeds derived from ``seed``."""
    out = []
    for k in range(n_records):
        rec = synth_ppg(default_synth_params(k % 2, record_seed(seed, k), duration_s))
        rec.record_id = f"record_{k:03d}"
        out.append(rec)
    return out


def featurize_records(records: Iterable[PpgRecord], cfg: CwtConfig = CwtConfig(),
                      window_s: float = 10.0, stride_s: float = 1.0, workers: int = 1):
    """Window every record and render each window; output keeps (record, start) order."""
    windows = [w for rec in records for w in segment_windows(rec, window_s, stride_s)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            images = list(pool.map(lambda w: window_to_image(w, cfg), windows))
    else:
        images = [window_to_image(w, cfg) for w in windows]
    if not images:
        return np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), np.float32), []
    return np.stack([im.pixels for im in images]), [im.label for im in images]


def synth_dataset(seed: int, n_records: int = 10, duration_s: float = 59.0):
    """Default desk-scale set: 10 records x 50 windows = 500 labelled images."""
    images, labels = featurize_records(synth_records(seed, n_records, duration_s))
    return images, np.asarray(labels, dtype=np.int64)


def hot_row_images(n: int, seed: int = 0, rows: Sequence[int] = (16, 48), width: int = 3,
                   noise: float = 0.05):
    """Linearly separable toy set: class c lights a horizontal band centred on ``rows[c]``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = rng.uniform(0.0, noise, size=(n, IMAGE_SIZE, IMAGE_SIZE))
    for i, c in enumerate(labels):
        r = rows[c]
        images[i, r - width // 2:r + width // 2 + 1, :] = 1.0
    return images.astype(np.float32), labels
