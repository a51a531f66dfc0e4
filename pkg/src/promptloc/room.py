"""Shoebox room simulation for a two-microphone array.

Scenes follow the ranges used for the training corpus: floor area 18-32 m^2,
T60 0.1-0.2 s, horizontal source distance [1, 2) m from the array centre and
azimuth in [0, 180] degrees. Impulse responses come from the image-source
method with a single frequency-independent wall reflection coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve

from ._backend import kernels
from .audio import SAMPLE_RATE, StereoClip

SPEED_OF_SOUND = 343.0
MIC_DISTANCE = 0.2
ARRAY_HEIGHT = 1.5
SINC_HALF_WIDTH = 40  # 81-tap fractional delay kernel
WALL_MARGIN = 0.1

AREA_RANGE = (18.0, 32.0)
T60_RANGE = (0.1, 0.2)
DISTANCE_RANGE = (1.0, 2.0)
HEIGHT_RANGE = (2.5, 4.0)
ASPECT_RANGE = (1.0, 1.5)
CENTER_JITTER = 0.5


@dataclass(frozen=True)
class RoomScene:
    room_dims: tuple[float, float, float]
    mic_positions: tuple[tuple[float, float, float], tuple[float, float, float]]
    source_position: tuple[float, float, float]
    t60: float
    seed: int

    def validate(self) -> None:
        room = np.asarray(self.room_dims)
        points = np.vstack([self.mic_positions, [self.source_position]])
        if np.any(points <= 0) or np.any(points >= room):
            raise ValueError("microphones and source must lie strictly inside the room")
        mics = np.asarray(self.mic_positions)
        if abs(np.linalg.norm(mics[1] - mics[0]) - MIC_DISTANCE) > 1e-9:
            raise ValueError("inter-microphone distance must be 0.2 m")
        area = room[0] * room[1]
        if not AREA_RANGE[0] <= area <= AREA_RANGE[1]:
            raise ValueError(f"floor area {area:.2f} m^2 outside {AREA_RANGE}")
        if not T60_RANGE[0] <= self.t60 <= T60_RANGE[1]:
            raise ValueError(f"t60 {self.t60} outside {T60_RANGE}")
        dist = horizontal_distance(self)
        if not DISTANCE_RANGE[0] <= dist < DISTANCE_RANGE[1]:
            raise ValueError(f"source distance {dist:.3f} m outside [1, 2)")

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "mic_positions": [list(m) for m in self.mic_positions],
            "source_position": list(self.source_position),
            "t60": self.t60,
            "seed": self.seed,
        }


@dataclass
class RIRPair:
    taps: np.ndarray  # [2, L]
    sample_rate: int
    direct_path_delays: tuple[int, int]
    azimuth_deg: Optional[int] = None


def _midpoint(scene: RoomScene) -> np.ndarray:
    return np.mean(np.asarray(scene.mic_positions), axis=0)


def horizontal_distance(scene: RoomScene) -> float:
    offset = np.asarray(scene.source_position) - _midpoint(scene)
    return float(np.hypot(offset[0], offset[1]))


def azimuth_exact(scene: RoomScene) -> float:
    """Unrounded horizontal angle between the mic axis (mic 0 -> mic 1) and the source."""
    mics = np.asarray(scene.mic_positions)
    axis = (mics[1] - mics[0])[:2]
    to_src = (np.asarray(scene.source_position) - _midpoint(scene))[:2]
    cross = axis[0] * to_src[1] - axis[1] * to_src[0]
    dot = axis @ to_src
    return math.degrees(math.atan2(abs(cross), dot))


def azimuth_of(scene: RoomScene) -> int:
    """Integer azimuth class in [1, 180]: rounded half-up, 0 degrees maps to 1."""
    deg = math.floor(azimuth_exact(scene) + 0.5)
    return int(min(max(deg, 1), 180))


def sample_room_scene(seed: int) -> RoomScene:
    """Draw a scene deterministically from ``seed``.

    Azimuth, distance, T60 and room height are drawn once; only the floor
    shape and array position are redrawn until the geometry fits, so the
    azimuth stays uniform on [0, 180].
    """
    rng = np.random.default_rng(seed)
    t60 = float(rng.uniform(*T60_RANGE))
    dist = float(rng.uniform(*DISTANCE_RANGE))
    phi = math.radians(float(rng.uniform(0.0, 180.0)))
    height = float(rng.uniform(*HEIGHT_RANGE))
    dx, dy = dist * math.cos(phi), dist * math.sin(phi)
    half_mic = MIC_DISTANCE / 2

    while True:
        area = rng.uniform(*AREA_RANGE)
        aspect = rng.uniform(*ASPECT_RANGE)
        width = math.sqrt(area * aspect)
        depth = area / width
        if rng.random() < 0.5:
            width, depth = depth, width
        cx, cy = width / 2, depth / 2
        x_lo = max(WALL_MARGIN + max(half_mic, -dx), cx - CENTER_JITTER)
        x_hi = min(width - WALL_MARGIN - max(half_mic, dx), cx + CENTER_JITTER)
        y_lo = max(WALL_MARGIN, cy - CENTER_JITTER)
        y_hi = min(depth - WALL_MARGIN - dy, cy + CENTER_JITTER)
        if x_lo < x_hi and y_lo < y_hi:
            break

    mx = float(rng.uniform(x_lo, x_hi))
    my = float(rng.uniform(y_lo, y_hi))
    mic0 = (mx - half_mic, my, ARRAY_HEIGHT)
    mic1 = (mx + half_mic, my, ARRAY_HEIGHT)
    source = (mx + dx, my + dy, ARRAY_HEIGHT)
    return RoomScene(
        room_dims=(float(width), float(depth), height),
        mic_positions=(mic0, mic1),
        source_position=source,
        t60=t60,
        seed=int(seed),
    )


def reflection_coefficient(room_dims, t60: float) -> float:
    """Uniform wall reflection coefficient from Sabine's formula."""
    w, d, h = room_dims
    volume = w * d * h
    surface = 2.0 * (w * d + w * h + d * h)
    absorption = 0.1611 * volume / (surface * t60)
    eps = 1e-6
    return math.sqrt(min(max(1.0 - absorption, eps), 1.0 - eps))


def simulate_rir(scene: RoomScene, max_order: Optional[int] = None,
                 sample_rate: int = SAMPLE_RATE) -> RIRPair:
    """Image-source RIRs for both microphones.

    Images whose propagation time exceeds ``1.2 * t60`` are dropped;
    ``max_order`` additionally caps the number of wall reflections
    (0 gives the anechoic direct path only).
    """
    src = np.asarray(scene.source_position, dtype=np.float64)
    mics = np.ascontiguousarray(scene.mic_positions, dtype=np.float64)
    room = np.asarray(scene.room_dims, dtype=np.float64)
    dists = np.linalg.norm(mics - src, axis=1)
    if np.any(dists < 1e-3):
        raise ValueError("degenerate geometry: source coincides with a microphone")

    beta = reflection_coefficient(scene.room_dims, scene.t60)
    horizon = 1.2 * scene.t60
    max_dist = max(horizon * SPEED_OF_SOUND, float(dists.max()))
    length = int(math.ceil(horizon * sample_rate)) + SINC_HALF_WIDTH + 1
    taps = kernels.image_source_rir(
        src, mics, room, beta, float(sample_rate), SPEED_OF_SOUND, max_dist,
        -1 if max_order is None else int(max_order), SINC_HALF_WIDTH, length,
    )
    delays = tuple(int(round(d / SPEED_OF_SOUND * sample_rate)) for d in dists)
    return RIRPair(taps=taps, sample_rate=sample_rate, direct_path_delays=delays,
                   azimuth_deg=azimuth_of(scene))


def spatialize(clip, rir: RIRPair) -> StereoClip:
    """Convolve a mono clip with both RIR channels, truncated to the clip length."""
    if clip.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: clip {clip.sample_rate} Hz, RIR {rir.sample_rate} Hz")
    n = len(clip.samples)
    out = np.stack([fftconvolve(clip.samples, h)[:n] for h in rir.taps])
    return StereoClip(out, sample_rate=clip.sample_rate, label=clip.label,
                      azimuth_deg=rir.azimuth_deg)


def scale_to_snr(target: StereoClip, interferer: StereoClip, snr_db: float) -> StereoClip:
    """Rescale ``interferer`` so that target/interferer energy equals ``snr_db``."""
    if len(target) != len(interferer) or target.sample_rate != interferer.sample_rate:
        raise ValueError("target and interferer must share length and sample rate")
    e_int = interferer.energy()
    if e_int == 0.0:
        raise ValueError("interferer is silent; SNR undefined")
    gain = math.sqrt(target.energy() / (e_int * 10.0 ** (snr_db / 10.0)))
    return StereoClip(interferer.samples * gain, sample_rate=interferer.sample_rate,
                      label=interferer.label, azimuth_deg=interferer.azimuth_deg)


def mix_at_snr(target: StereoClip, interferer: StereoClip, snr_db: float) -> StereoClip:
    scaled = scale_to_snr(target, interferer, snr_db)
    return StereoClip(target.samples + scaled.samples, sample_rate=target.sample_rate,
                      label=target.label, azimuth_deg=target.azimuth_deg)
