"""Toy source corpus, two-source mixture synthesis and the dataset manifest.

A manifest is a JSON-lines file; each line describes one mixture and points
(relative to the manifest) at three stereo WAVs: the mixture, the spatialized
clean target and the spatialized, SNR-scaled interferer. The target file plus
the interferer file reproduce the mixture up to 16-bit quantization.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .audio import SAMPLE_RATE, MonoClip, StereoClip, load_mono, read_wav, write_wav
from .encoders import PromptRef
from .features import SpectroTensor, stft
from .room import sample_room_scene, scale_to_snr, simulate_rir, spatialize

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
TARGET_RMS = 0.05
PCM_STEP = 1.0 / 32767.0
TOY_DURATION = 0.5  # seconds; 14 STFT frames

# (kind, low Hz, high Hz) per toy category
TOY_CLASSES = [
    ("tone", 300.0, 600.0),
    ("noise", 2000.0, 4000.0),
    ("tone", 1000.0, 1500.0),
    ("noise", 5000.0, 7000.0),
]


def _bandpass_noise(rng, n, lo, hi, sample_rate):
    sos = butter(6, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")
    return sosfiltfilt(sos, rng.normal(size=n))


def toy_clip(category: int, instance: int, duration: float = TOY_DURATION,
             sample_rate: int = SAMPLE_RATE, seed: int = 0) -> MonoClip:
    """One band-limited toy source: a tone cluster or modulated band noise."""
    kind, lo, hi = TOY_CLASSES[category]
    rng = np.random.default_rng([seed, category, instance])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    if kind == "tone":
        x = sum(np.sin(2 * np.pi * rng.uniform(lo, hi) * t + rng.uniform(0, 2 * np.pi))
                for _ in range(3))
        noise = _bandpass_noise(rng, n, lo, hi, sample_rate)
        x = x / np.std(x) + 0.3 * noise / np.std(noise)
    else:
        x = _bandpass_noise(rng, n, lo, hi, sample_rate)
        rate = rng.uniform(2.0, 6.0)
        x = x * (1.0 + 0.5 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)))
    x = 0.1 * x / np.sqrt(np.mean(x**2))
    return MonoClip(x, sample_rate, label=category, instance=f"{category}-{instance}")


def toy_pool(n_per_class: int = 10, n_classes: int = 2, duration: float = TOY_DURATION,
             seed: int = 0) -> list[MonoClip]:
    if not 1 <= n_classes <= len(TOY_CLASSES):
        raise ValueError(f"toy corpus has {len(TOY_CLASSES)} categories")
    return [toy_clip(c, k, duration, seed=seed) for c in range(n_classes) for k in range(n_per_class)]


def load_pool(root, duration: Optional[float] = None) -> tuple[list[MonoClip], list[str]]:
    """Load ``root/<category>/<instance>.wav``; categories get ids in sorted name order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"source pool {root} is not a directory")
    names = sorted(p.name for p in root.iterdir() if p.is_dir())
    pool = []
    for cat, name in enumerate(names):
        for wav in sorted((root / name).glob("*.wav")):
            clip = load_mono(wav)
            samples = clip.samples
            if duration is not None:
                n = int(round(duration * clip.sample_rate))
                samples = np.pad(samples[:n], (0, max(0, n - len(samples))))
            pool.append(MonoClip(samples, clip.sample_rate, label=cat, instance=f"{cat}-{wav.stem}"))
    return pool, names


def _by_category(pool: Sequence[MonoClip]) -> dict[int, list[MonoClip]]:
    groups = defaultdict(list)
    for clip in pool:
        if clip.label is None:
            raise ValueError("pool clips need a category label")
        groups[clip.label].append(clip)
    return dict(sorted(groups.items()))


def _other_instance(rng, group: list[MonoClip], exclude: str) -> str:
    others = [c.instance for c in group if c.instance != exclude]
    if not others:
        raise ValueError(f"category {group[0].label} needs at least two instances for prompting")
    return others[int(rng.integers(len(others)))]


@dataclass
class _Draw:
    target: MonoClip
    interferer: MonoClip
    prompt: PromptRef
    interferer_prompt: PromptRef
    scene_seed: int
    interferer_scene_seed: int


def _draw(pool: Sequence[MonoClip], rng) -> _Draw:
    groups = _by_category(pool)
    if len(groups) < 2:
        raise ValueError("pool needs at least two sound categories")
    eligible = [c for c, g in groups.items() if len(g) >= 2]
    if not eligible:
        raise ValueError("no category has two instances to draw a prompt from")
    cat_t = eligible[int(rng.integers(len(eligible)))]
    cats_i = [c for c in groups if c != cat_t]
    cat_i = cats_i[int(rng.integers(len(cats_i)))]
    target = groups[cat_t][int(rng.integers(len(groups[cat_t])))]
    interferer = groups[cat_i][int(rng.integers(len(groups[cat_i])))]
    prompt = PromptRef(cat_t, _other_instance(rng, groups[cat_t], target.instance))
    if len(groups[cat_i]) >= 2:
        iprompt = PromptRef(cat_i, _other_instance(rng, groups[cat_i], interferer.instance))
    else:
        iprompt = PromptRef(cat_i, interferer.instance)
    seeds = rng.integers(0, 2**31 - 1, size=2)
    return _Draw(target, interferer, prompt, iprompt, int(seeds[0]), int(seeds[1]))


def _render(draw: _Draw, snr_db: float):
    if len(draw.target) != len(draw.interferer):
        raise ValueError("target and interferer clips must have equal length (pad before mixing)")
    tgt = spatialize(draw.target, simulate_rir(sample_room_scene(draw.scene_seed)))
    itf = spatialize(draw.interferer, simulate_rir(sample_room_scene(draw.interferer_scene_seed)))
    itf = scale_to_snr(tgt, itf, snr_db)
    return tgt, itf


@dataclass
class TrainingExample:
    mixture: SpectroTensor
    x_gt: np.ndarray  # [2, T, F] real STFT of the spatialized target
    azimuth: int
    prompt: PromptRef
    target_category: int
    interferer_category: int
    target_instance: str
    target: StereoClip = field(repr=False)
    interferer: StereoClip = field(repr=False)


def make_example(pool: Sequence[MonoClip], seed: int, snr_db: float = 0.0) -> TrainingExample:
    """Draw, spatialize and mix one two-source example in memory."""
    draw = _draw(pool, np.random.default_rng(seed))
    tgt, itf = _render(draw, snr_db)
    mix = StereoClip(tgt.samples + itf.samples, tgt.sample_rate, label=tgt.label,
                     azimuth_deg=tgt.azimuth_deg)
    return TrainingExample(
        mixture=stft(mix),
        x_gt=stft(tgt).real,
        azimuth=tgt.azimuth_deg,
        prompt=draw.prompt,
        target_category=draw.target.label,
        interferer_category=draw.interferer.label,
        target_instance=draw.target.instance,
        target=tgt,
        interferer=itf,
    )


@dataclass
class SynthConfig:
    n_records: int = 32
    snr_db: float = 0.0
    target_rms: float = TARGET_RMS


def _record(i: int, pool, config: SynthConfig, seed: int, out_dir: Path) -> dict:
    rng = np.random.default_rng([seed, i])
    draw = _draw(pool, rng)
    tgt, itf = _render(draw, config.snr_db)
    mix = tgt.samples + itf.samples
    gain = config.target_rms / max(np.sqrt(np.mean(mix**2)), 1e-12)
    gain = min(gain, 0.99 / max(np.abs(mix).max(), np.abs(tgt.samples).max(), np.abs(itf.samples).max()))
    names = {k: f"audio/{i:05d}_{k}.wav" for k in ("mixture", "target", "interferer")}
    write_wav(out_dir / names["mixture"], mix * gain)
    write_wav(out_dir / names["target"], tgt.samples * gain)
    write_wav(out_dir / names["interferer"], itf.samples * gain)
    return {
        "id": i,
        **names,
        "target_azimuth": tgt.azimuth_deg,
        "target_category": draw.target.label,
        "target_instance": draw.target.instance,
        "prompt": draw.prompt.to_dict(),
        "interferer_azimuth": itf.azimuth_deg,
        "interferer_category": draw.interferer.label,
        "interferer_instance": draw.interferer.instance,
        "interferer_prompt": draw.interferer_prompt.to_dict(),
        "scene_seed": draw.scene_seed,
        "interferer_scene_seed": draw.interferer_scene_seed,
        "snr_db": config.snr_db,
    }


def build_dataset(config: SynthConfig, seed: int, out_dir, pool: Sequence[MonoClip]) -> list[dict]:
    """Synthesize ``config.n_records`` mixtures into ``out_dir`` and write the manifest."""
    if len(_by_category(pool)) < 2:
        raise ValueError("pool needs at least two sound categories")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(config.n_records):
        records.append(_record(i, pool, config, seed, out_dir))
        if (i + 1) % 50 == 0:
            logger.info("synthesized %d/%d records", i + 1, config.n_records)
    write_manifest(out_dir / MANIFEST_NAME, records)
    return records


def write_manifest(path, records: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def resolve(manifest_path, rec: dict, key: str) -> Path:
    base = Path(manifest_path)
    base = base if base.is_dir() else base.parent
    return base / rec[key]


def missing_files(manifest_path, records: Sequence[dict]) -> list[Path]:
    keys = ("mixture", "target", "interferer")
    return [p for rec in records for p in (resolve(manifest_path, rec, k) for k in keys) if not p.exists()]


def audit_manifest(manifest_path) -> list[str]:
    """Check labels, file presence and the mixture = target + interferer identity.

    Returns a list of problems (empty when the dataset is consistent).
    """
    records = read_manifest(manifest_path)
    problems = [f"missing file {p}" for p in missing_files(manifest_path, records)]
    if problems:
        return problems
    for rec in records:
        for key in ("target_azimuth", "interferer_azimuth"):
            if not 1 <= rec[key] <= 180:
                problems.append(f"record {rec['id']}: {key}={rec[key]} outside [1, 180]")
        if rec["target_category"] == rec["interferer_category"]:
            problems.append(f"record {rec['id']}: target and interferer share a category")
        if rec["prompt"]["instance"] == rec["target_instance"]:
            problems.append(f"record {rec['id']}: prompt reuses the target instance")
        mix, _ = read_wav(resolve(manifest_path, rec, "mixture"))
        tgt, _ = read_wav(resolve(manifest_path, rec, "target"))
        itf, _ = read_wav(resolve(manifest_path, rec, "interferer"))
        err = np.abs(tgt + itf - mix).max()
        if err > 1.5 * PCM_STEP:
            problems.append(f"record {rec['id']}: target + interferer differs from mixture by {err:.2e}")
    return problems
