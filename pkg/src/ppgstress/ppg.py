"""PPG ingest, synthetic beat-model generator and fixed-length windowing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

NON_STRESS = 0
STRESS = 1

DEFAULT_RATE_HZ = 64.0
HR_LIMITS_HZ = (0.5, 3.5)


@dataclass
class PpgRecord:
    samples: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ
    label: Optional[int] = None
    record_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    def __len__(self):
        return self.samples.size


@dataclass
class Window:
    samples: np.ndarray
    start_index: int
    label: Optional[int] = None
    sample_rate_hz: float = DEFAULT_RATE_HZ
    record_id: str = ""


@dataclass
class SynthParams:
    """Two-harmonic beat model parameters for one synthetic record.

    ``hr_band_hz`` is the range the per-beat heart rate is drawn from.
    """

    label: int
    hr_band_hz: tuple[float, float]
    harmonic_ratio: float = 0.4
    wander_amp: float = 0.3
    noise_std: float = 0.1
    duration_s: float = 60.0
    seed: int = 0
    sample_rate_hz: float = DEFAULT_RATE_HZ
    window_s: float = 10.0

    def validate(self):
        lo, hi = self.hr_band_hz
        if not (HR_LIMITS_HZ[0] < lo <= hi < HR_LIMITS_HZ[1]):
            raise ValueError(f"hr band {self.hr_band_hz} must lie within {HR_LIMITS_HZ} Hz")
        if self.label not in (NON_STRESS, STRESS):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.noise_std < 0 or self.wander_amp < 0 or self.harmonic_ratio < 0:
            raise ValueError("amplitudes and noise std must be non-negative")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if self.duration_s < self.window_s:
            raise ValueError(
                f"duration {self.duration_s} s is shorter than one window ({self.window_s} s)"
            )


# Resting vs. elevated heart rate; the non-stress upper bound sits below the stress lower bound.
NON_STRESS_BAND_HZ = (1.0, 1.3)
STRESS_BAND_HZ = (1.6, 2.1)


def default_synth_params(label: int, seed: int, duration_s: float = 60.0) -> SynthParams:
    if label == STRESS:
        return SynthParams(STRESS, STRESS_BAND_HZ, harmonic_ratio=0.25, duration_s=duration_s, seed=seed)
    return SynthParams(NON_STRESS, NON_STRESS_BAND_HZ, harmonic_ratio=0.5, duration_s=duration_s, seed=seed)


def check_separable(non_stress: SynthParams, stress: SynthParams):
    if not non_stress.hr_band_hz[1] < stress.hr_band_hz[0]:
        raise ValueError("non-stress band must end below the stress band")


def _beat_frequencies(rng: np.random.Generator, n: int, rate: float, band) -> np.ndarray:
    # Instantaneous HR, piecewise constant over each beat.
    f_inst = np.empty(n)
    i = 0
    while i < n:
        f = rng.uniform(band[0], band[1])
        beat_len = max(1, int(round(rate / f)))
        f_inst[i:i + beat_len] = f
        i += beat_len
    return f_inst


def synth_ppg(params: SynthParams) -> PpgRecord:
    params.validate()
    rate = params.sample_rate_hz
    n = int(round(params.duration_s * rate))
    rng = np.random.default_rng(params.seed)

    harmonic_phase = rng.uniform(0.0, 2 * np.pi)
    wander_freq = rng.uniform(0.1, 0.3)
    wander_phase = rng.uniform(0.0, 2 * np.pi)
    f_inst = _beat_frequencies(rng, n, rate, params.hr_band_hz)

    t = np.arange(n) / rate
    # Phase-continuous integral of the instantaneous HR.
    phase = 2 * np.pi * np.concatenate(([0.0], np.cumsum(f_inst[:-1]))) / rate
    x = np.sin(phase) + params.harmonic_ratio * np.sin(2 * phase + harmonic_phase)
    x += params.wander_amp * np.sin(2 * np.pi * wander_freq * t + wander_phase)
    if params.noise_std > 0:
        x += rng.normal(0.0, params.noise_std, size=n)
    return PpgRecord(x, rate, params.label, record_id=f"synth-{params.label}-{params.seed}")


def load_ppg_csv(path, sample_rate_hz: float = DEFAULT_RATE_HZ) -> PpgRecord:
    """Read one amplitude per line, with an optional integer label column.

    The record is labelled only when every row carries the same label.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"PPG file not found: {path}")
    samples: list[float] = []
    labels: list[int] = []
    with path.open(newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                value = float(row[0])
            except ValueError:
                raise ValueError(f"{path}: row {row_no}: non-numeric amplitude {row[0]!r}") from None
            if not math.isfinite(value):
                raise ValueError(f"{path}: row {row_no}: non-finite amplitude {row[0]!r}")
            samples.append(value)
            if len(row) > 1 and row[1].strip():
                try:
                    labels.append(int(float(row[1])))
                except ValueError:
                    raise ValueError(f"{path}: row {row_no}: non-numeric label {row[1]!r}") from None
    if not samples:
        raise ValueError(f"{path}: empty file")
    label = None
    if len(labels) == len(samples) and len(set(labels)) == 1:
        label = labels[0]
    return PpgRecord(np.array(samples), sample_rate_hz, label, record_id=path.stem)


def write_ppg_csv(record: PpgRecord, path):
    # repr() keeps full float precision so a reload is exact.
    lines = []
    for v in record.samples:
        lines.append(repr(float(v)) if record.label is None else f"{float(v)!r},{record.label}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def window_length(window_s: float, sample_rate_hz: float) -> int:
    return int(round(window_s * sample_rate_hz))


def segment_windows(record: PpgRecord, window_s: float = 10.0, stride_s: float = 1.0) -> list[Window]:
    w = window_length(window_s, record.sample_rate_hz)
    s = window_length(stride_s, record.sample_rate_hz)
    if w < 1 or s < 1:
        raise ValueError("window and stride must each span at least one sample")
    n = len(record)
    if n < w:
        raise ValueError(f"record shorter than one window ({n} < {w} samples)")
    count = (n - w) // s + 1
    return [
        Window(record.samples[k * s:k * s + w].copy(), k * s, record.label,
               record.sample_rate_hz, record.record_id)
        for k in range(count)
    ]


def dominant_frequency(samples: Sequence[float], sample_rate_hz: float) -> float:
    """Frequency of the largest non-DC bin of the magnitude spectrum."""
    x = np.asarray(samples, dtype=np.float64)
    spec = np.abs(np.fft.rfft(x - x.mean()))
    freqs = np.fft.rfftfreq(x.size, 1.0 / sample_rate_hz)
    spec[0] = 0.0
    return float(freqs[int(np.argmax(spec))])
