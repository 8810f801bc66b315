"""Morlet CWT, scalogram rendering, augmentation and the SCLG tensor file."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .ppg import Window

IMAGE_SIZE = 64
SCLG_MAGIC = b"SCLG"
SCLG_VERSION = 1
NO_LABEL = 255


@dataclass(frozen=True)
class CwtConfig:
    omega0: float = 6.0
    n_scales: int = 64
    band_hz: tuple[float, float] = (0.5, 8.0)
    backend: str = "fft"

    def validate(self, sample_rate_hz: float):
        if self.n_scales < 2:
            raise ValueError("need at least two scales")
        lo, hi = self.band_hz
        if not (0 < lo < hi < sample_rate_hz / 2):
            raise ValueError(
                f"band {self.band_hz} Hz must lie inside (0, Nyquist={sample_rate_hz / 2}) Hz"
            )
        if self.backend not in ("fft", "direct"):
            raise ValueError(f"unknown CWT backend {self.backend!r}")
        if self.omega0 <= 0:
            raise ValueError("omega0 must be positive")

    def frequencies(self) -> np.ndarray:
        # Row 0 is the highest frequency (smallest scale).
        return np.geomspace(self.band_hz[1], self.band_hz[0], self.n_scales)

    def scales(self, sample_rate_hz: float) -> np.ndarray:
        """Scales in samples, from f = omega0 * rate / (2 pi s)."""
        return self.omega0 * sample_rate_hz / (2 * np.pi * self.frequencies())


@dataclass
class ScalogramMatrix:
    coeffs: np.ndarray  # complex, (n_scales, n_samples)
    scales: np.ndarray
    frequencies_hz: np.ndarray


@dataclass
class ScalogramImage:
    pixels: np.ndarray  # float32, (64, 64), values in [0, 1]
    label: Optional[int] = None
    record_id: str = ""
    start_index: int = 0


@dataclass(frozen=True)
class AugmentParams:
    max_rotation_deg: float = 10.0
    max_shift: float = 0.10
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_shift < 0.5:
            raise ValueError("shift fraction must be in [0, 0.5)")
        if not 0 <= self.max_rotation_deg <= 45:
            raise ValueError("rotation must be in [0, 45] degrees")
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip probability must be in [0, 1]")


def morlet(u: np.ndarray, omega0: float = 6.0) -> np.ndarray:
    return np.pi ** -0.25 * np.exp(1j * omega0 * u) * np.exp(-0.5 * u * u)


def _kernels(n: int, scales: np.ndarray, omega0: float) -> np.ndarray:
    """conj(psi(d / s)) / sqrt(s) for every lag d in [-(n-1), n-1]."""
    lags = np.arange(-(n - 1), n, dtype=np.float64)
    u = lags[None, :] / scales[:, None]
    return np.conj(morlet(u, omega0)) / np.sqrt(scales)[:, None]


def cwt(window, cfg: CwtConfig = CwtConfig(), sample_rate_hz: Optional[float] = None) -> ScalogramMatrix:
    """Continuous wavelet transform of one window with an analytic Morlet.

    ``window`` may be a :class:`Window` or a bare sample array (then
    ``sample_rate_hz`` is required). Time is measured in samples, so the
    coefficient at (s, tau) is ``sum_m x[m] conj(psi((m - tau) / s)) / sqrt(s)``.
    """
    if isinstance(window, Window):
        x = window.samples
        rate = window.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
    else:
        x = window
        rate = sample_rate_hz
        if rate is None:
            raise ValueError("sample_rate_hz is required for raw sample arrays")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("window must hold at least two samples")
    cfg.validate(rate)
    n = x.size
    scales = cfg.scales(rate)
    kern = _kernels(n, scales, cfg.omega0)

    if cfg.backend == "direct":
        # Toeplitz gather: row tau holds the kernel at lags m - tau.
        idx = np.arange(n)[None, :] - np.arange(n)[:, None] + (n - 1)
        coeffs = np.empty((scales.size, n), dtype=np.complex128)
        for k in range(scales.size):
            coeffs[k] = kern[k][idx] @ x
    else:
        full = fftconvolve(x[None, :], kern[:, ::-1], mode="full", axes=1)
        coeffs = full[:, n - 1:2 * n - 1]
    return ScalogramMatrix(coeffs, scales, cfg.frequencies())


def _block_mean(a: np.ndarray, axis: int, size: int) -> np.ndarray:
    if a.shape[axis] < size:
        raise ValueError(f"axis {axis} has {a.shape[axis]} entries, need at least {size}")
    if a.shape[axis] == size:
        return a
    parts = np.array_split(a, size, axis=axis)
    return np.concatenate([p.mean(axis=axis, keepdims=True) for p in parts], axis=axis)


def render_image(m: ScalogramMatrix, label: Optional[int] = None,
                 record_id: str = "", start_index: int = 0) -> ScalogramImage:
    """|W| -> log1p -> min-max to [0, 1] -> block-average down to 64x64."""
    mag = np.log1p(np.abs(m.coeffs))
    lo, hi = mag.min(), mag.max()
    if hi > lo:
        norm = (mag - lo) / (hi - lo)
    else:
        norm = np.zeros_like(mag)
    img = _block_mean(_block_mean(norm, 0, IMAGE_SIZE), 1, IMAGE_SIZE)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return ScalogramImage(img, label, record_id, start_index)


def window_to_image(window: Window, cfg: CwtConfig = CwtConfig()) -> ScalogramImage:
    return render_image(cwt(window, cfg), window.label, window.record_id, window.start_index)


def augment(img: ScalogramImage, p: AugmentParams, draw_index: int) -> ScalogramImage:
    """Random flip, rotation and shift, reproducible from (p.seed, draw_index).

    Draws are made in a fixed order whatever their magnitudes, so changing one
    knob does not reshuffle the others.
    """
    rng = np.random.default_rng([p.seed, draw_index])
    flip = rng.random() < p.flip_prob
    angle = np.deg2rad(rng.uniform(-1.0, 1.0) * p.max_rotation_deg)
    h, w = img.pixels.shape
    dy = rng.uniform(-1.0, 1.0) * p.max_shift * h
    dx = rng.uniform(-1.0, 1.0) * p.max_shift * w

    out = img.pixels[:, ::-1] if flip else img.pixels
    if angle != 0.0 or dy != 0.0 or dx != 0.0:
        c, s = np.cos(angle), np.sin(angle)
        inv = np.array([[c, s], [-s, c]])
        center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        offset = center - inv @ (center + np.array([dy, dx]))
        out = ndimage.affine_transform(out.astype(np.float64), inv, offset=offset,
                                       order=1, mode="constant", cval=0.0)
        out = np.clip(out, 0.0, 1.0)
    return ScalogramImage(np.ascontiguousarray(out, dtype=np.float32), img.label,
                          img.record_id, img.start_index)


def save_scalograms(path, images: np.ndarray, labels: Sequence[Optional[int]]):
    images = np.asarray(images, dtype="<f4")
    if images.ndim != 3 or images.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected (count, 64, 64) images, got {images.shape}")
    if len(labels) != images.shape[0]:
        raise ValueError("one label per image required")
    lab = bytes(NO_LABEL if v is None else int(v) for v in labels)
    with open(path, "wb") as fh:
        fh.write(SCLG_MAGIC)
        fh.write(struct.pack("<IIII", SCLG_VERSION, images.shape[0], IMAGE_SIZE, IMAGE_SIZE))
        fh.write(images.tobytes())
        fh.write(lab)


def load_scalograms(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (images float32 (count, 64, 64), labels uint8; 255 marks unlabelled)."""
    data = Path(path).read_bytes()
    if data[:4] != SCLG_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 20:
        raise ValueError(f"{path}: truncated header")
    version, count, h, w = struct.unpack_from("<IIII", data, 4)
    if version != SCLG_VERSION:
        raise ValueError(f"{path}: unsupported SCLG version {version}")
    expected = 20 + count * h * w * 4 + count
    if len(data) != expected:
        raise ValueError(f"{path}: truncated payload, expected {expected} bytes, got {len(data)}")
    images = np.frombuffer(data, dtype="<f4", count=count * h * w, offset=20).reshape(count, h, w)
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=20 + count * h * w * 4)
    return images.astype(np.float32), labels.copy()


def write_pgm(path, pixels: np.ndarray):
    gray = np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def stack_images(images: Iterable[ScalogramImage]) -> tuple[np.ndarray, list]:
    images = list(images)
    return np.stack([im.pixels for im in images]), [im.label for im in images]
