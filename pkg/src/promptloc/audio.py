"""Audio clip containers and 16-bit PCM WAV input/output."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000


@dataclass
class MonoClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[int] = None
    instance: Optional[str] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"mono clip needs 1-D samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class StereoClip:
    """Two-channel clip, ``samples`` has shape ``[2, n]``."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    label: Optional[int] = None
    azimuth_deg: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != 2:
            raise ValueError(f"stereo clip needs shape [2, n], got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")
        if self.azimuth_deg is not None and not 1 <= self.azimuth_deg <= 180:
            raise ValueError(f"azimuth {self.azimuth_deg} outside [1, 180]")

    def __len__(self):
        return self.samples.shape[1]

    def energy(self) -> float:
        return float(np.sum(self.samples**2))


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM. ``samples`` is [n] or [channels, n]."""
    samples = np.asarray(samples, dtype=np.float64)
    if np.max(np.abs(samples), initial=0.0) > 1.0:
        raise ValueError("samples exceed full scale; rescale before writing")
    pcm = np.round(samples * 32767.0).astype(np.int16)
    if pcm.ndim == 2:
        pcm = pcm.T
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), sample_rate, pcm)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM WAV. Returns float samples ([n] or [channels, n]) and the rate."""
    rate, pcm = wavfile.read(str(path))
    if pcm.dtype != np.int16:
        raise ValueError(f"{path}: expected 16-bit PCM, got {pcm.dtype}")
    samples = pcm.astype(np.float64) / 32767.0
    if samples.ndim == 2:
        samples = samples.T
    return samples, rate


def load_stereo(path) -> StereoClip:
    samples, rate = read_wav(path)
    return StereoClip(samples, sample_rate=rate)


def load_mono(path) -> MonoClip:
    samples, rate = read_wav(path)
    if samples.ndim == 2:
        samples = samples.mean(axis=0)
    return MonoClip(samples, sample_rate=rate)
