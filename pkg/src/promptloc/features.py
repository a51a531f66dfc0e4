"""STFT front end and a GCC-PHAT azimuth estimator used as a geometric check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .audio import SAMPLE_RATE, StereoClip
from .room import MIC_DISTANCE, SPEED_OF_SOUND

FRAME_LEN = 1024  # 64 ms at 16 kHz
HOP_LEN = 512  # 32 ms
PHAT_EPS = 1e-8


@dataclass
class SpectroTensor:
    real: np.ndarray  # [2, T, F]
    imag: np.ndarray  # [2, T, F]
    frame_len: int = FRAME_LEN
    hop_len: int = HOP_LEN
    sample_rate: int = SAMPLE_RATE

    @property
    def n_frames(self) -> int:
        return self.real.shape[1]

    @property
    def n_bins(self) -> int:
        return self.real.shape[2]


def n_frames(n_samples: int, frame_len: int = FRAME_LEN, hop_len: int = HOP_LEN) -> int:
    return (n_samples - frame_len) // hop_len + 1


def stft(clip: StereoClip, frame_len: int = FRAME_LEN, hop_len: int = HOP_LEN) -> SpectroTensor:
    """Hann-windowed STFT without centring or padding, split into real and imaginary parts."""
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.shape[-1] < frame_len:
        raise ValueError(f"clip has {x.shape[-1]} samples, need at least {frame_len}")
    window = get_window("hann", frame_len)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)[:, ::hop_len]
    spec = np.fft.rfft(frames * window, axis=-1)
    return SpectroTensor(spec.real.copy(), spec.imag.copy(), frame_len, hop_len, clip.sample_rate)


def default_max_lag(mic_distance: float = MIC_DISTANCE, sample_rate: int = SAMPLE_RATE) -> int:
    return int(math.ceil(mic_distance / SPEED_OF_SOUND * sample_rate)) + 2


def gcc_phat_tdoa(clip: StereoClip, max_lag: int | None = None) -> float:
    """Time difference of arrival in samples via GCC-PHAT.

    Sign convention: a positive lag means channel 1 leads, i.e. channel 0
    receives the wavefront ``lag`` samples later than channel 1.
    """
    if max_lag is None:
        max_lag = default_max_lag(sample_rate=clip.sample_rate)
    x0, x1 = np.asarray(clip.samples, dtype=np.float64)
    if not np.any(x0) or not np.any(x1):
        raise ValueError("GCC-PHAT needs nonzero energy in both channels")
    n = len(x0)
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    cross = np.fft.rfft(x0, nfft) * np.conj(np.fft.rfft(x1, nfft))
    cc = np.fft.irfft(cross / np.maximum(np.abs(cross), PHAT_EPS), nfft)
    max_lag = min(max_lag, n - 1)
    # lags -max_lag..max_lag
    window = np.concatenate([cc[-max_lag:], cc[: max_lag + 1]]) if max_lag > 0 else cc[:1]
    peak = int(np.argmax(window))
    offset = 0.0
    if 0 < peak < len(window) - 1:
        left, mid, right = window[peak - 1], window[peak], window[peak + 1]
        denom = left - 2.0 * mid + right
        if denom != 0.0:
            offset = 0.5 * (left - right) / denom
    return float(peak - max_lag + offset)


def tdoa_to_azimuth(lag: float, mic_distance: float = MIC_DISTANCE,
                    sample_rate: int = SAMPLE_RATE) -> float:
    """Far-field azimuth in degrees from a lag in samples (clamped to [0, 180])."""
    cos_theta = lag * SPEED_OF_SOUND / (sample_rate * mic_distance)
    return math.degrees(math.acos(min(max(cos_theta, -1.0), 1.0)))
