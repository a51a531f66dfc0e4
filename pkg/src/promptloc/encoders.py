"""Semantic encoders for the prompt branch.

The network only needs a sequence of audio embeddings ``[t, d_A]`` and one
visual embedding ``[d_V]``. Any external model can supply these through a
line-delimited embedding file (see :class:`EmbeddingStore`); the toy encoders
here are deterministic stand-ins that keep experiments self-contained.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .audio import MonoClip

AUDIO_DIM = 32
VISUAL_DIM = 64
SEMANTIC_HOP = 0.5  # seconds
N_TOY_CATEGORIES = 16
INSTANCE_JITTER = 0.1


@dataclass
class EmbeddingSequence:
    values: np.ndarray  # [t, d_A]
    frame_hop: float = SEMANTIC_HOP

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if len(self.values) < 1 or not np.all(np.isfinite(self.values)):
            raise ValueError("embedding sequence must be finite with at least one frame")


@dataclass(frozen=True)
class PromptRef:
    """Reference to a prompt image: a category and an instance within it."""

    category: int
    instance: str

    @property
    def key(self) -> str:
        return f"{self.category}:{self.instance}"

    def to_dict(self) -> dict:
        return {"category": self.category, "instance": self.instance}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRef":
        return cls(int(d["category"]), str(d["instance"]))


class EmbeddingStore:
    """Precomputed embeddings keyed by id, read from ``{"id": ..., "vector": [...]}`` lines."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        dims = {v.shape[-1] for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"inconsistent embedding dimensions: {sorted(dims)}")
        self.vectors = vectors
        self.dim = dims.pop() if dims else None

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        vectors = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                vec = np.asarray(rec["vector"], dtype=np.float64)
                if not np.all(np.isfinite(vec)):
                    raise ValueError(f"{path}:{lineno}: non-finite values")
                vectors[str(rec["id"])] = vec
        return cls(vectors)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for key, vec in self.vectors.items():
                fh.write(json.dumps({"id": key, "vector": vec.tolist()}) + "\n")

    def __contains__(self, key) -> bool:
        return key in self.vectors

    def __getitem__(self, key) -> np.ndarray:
        return self.vectors[key]


def _band_edges(n_bands: int, sample_rate: int, lo: float = 50.0) -> np.ndarray:
    return np.geomspace(lo, sample_rate / 2, n_bands + 1)


class ToyAudioEncoder:
    """Per-frame log band energies, centred and unit-normalized, then a fixed random rotation."""

    def __init__(self, dim: int = AUDIO_DIM, hop: float = SEMANTIC_HOP, seed: int = 0,
                 floor: float = 1e-6):
        self.dim = dim
        self.hop = hop
        self.floor = floor
        rng = np.random.default_rng(seed)
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        self.projection = q

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        return max(1, n_samples // int(round(self.hop * sample_rate)))

    def __call__(self, clip: MonoClip) -> EmbeddingSequence:
        x = clip.samples
        if len(x) == 0:
            raise ValueError("empty clip")
        hop = int(round(self.hop * clip.sample_rate))
        t = self.n_frames(len(x), clip.sample_rate)
        edges = _band_edges(self.dim, clip.sample_rate)
        feats = np.empty((t, self.dim))
        for i in range(t):
            seg = x[i * hop: (i + 1) * hop] if len(x) >= hop else x
            power = np.abs(np.fft.rfft(seg)) ** 2 / len(seg)
            freqs = np.fft.rfftfreq(len(seg), 1.0 / clip.sample_rate)
            band = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, self.dim - 1)
            energy = np.bincount(band, weights=power, minlength=self.dim)
            feats[i] = np.log(energy + self.floor)
        # drop the overall level and keep the spectral shape at unit scale, so the
        # audio half of a fused prompt does not drown out the visual half
        feats -= feats.mean(axis=1, keepdims=True)
        feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
        return EmbeddingSequence(feats @ self.projection, frame_hop=self.hop)


class ToyImageEncoder:
    """Seeded category table plus a small per-instance perturbation."""

    def __init__(self, dim: int = VISUAL_DIM, n_categories: int = N_TOY_CATEGORIES,
                 seed: int = 0, jitter: float = INSTANCE_JITTER):
        rng = np.random.default_rng(seed)
        table = rng.normal(size=(n_categories, dim))
        self.table = table / np.linalg.norm(table, axis=1, keepdims=True)
        self.dim = dim
        self.seed = seed
        self.jitter = jitter

    def __call__(self, ref: PromptRef) -> np.ndarray:
        if not 0 <= ref.category < len(self.table):
            raise KeyError(f"unknown toy category {ref.category}")
        rng = np.random.default_rng([self.seed, zlib.crc32(ref.key.encode())])
        noise = rng.normal(size=self.dim)
        return self.table[ref.category] + self.jitter * noise / np.linalg.norm(noise)


_DEFAULT_AUDIO = ToyAudioEncoder()
_DEFAULT_IMAGE = ToyImageEncoder()


def encode_audio_semantic(clip: MonoClip, encoder=None,
                          store: Optional[EmbeddingStore] = None) -> EmbeddingSequence:
    """Audio embedding sequence; a store entry keyed by ``clip.instance`` takes precedence."""
    if store is not None and clip.instance is not None and clip.instance in store:
        return EmbeddingSequence(store[clip.instance])
    return (encoder or _DEFAULT_AUDIO)(clip)


def encode_image_semantic(ref: Union[PromptRef, str], encoder=None,
                          store: Optional[EmbeddingStore] = None) -> np.ndarray:
    """Visual embedding for a prompt; ``store`` entries are looked up by ``ref.key``."""
    key = ref if isinstance(ref, str) else ref.key
    if store is not None and key in store:
        return np.asarray(store[key], dtype=np.float64)
    if isinstance(ref, str):
        cat, _, inst = ref.partition(":")
        ref = PromptRef(int(cat), inst)
    return (encoder or _DEFAULT_IMAGE)(ref)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def select_prompt_frame(frame_embs: Sequence[np.ndarray], text_emb: np.ndarray) -> int:
    """Index of the frame most aligned (cosine) with the text embedding; ties -> first."""
    if len(frame_embs) == 0:
        raise ValueError("no frames to choose from")
    text = np.asarray(text_emb, dtype=np.float64)
    frames = np.asarray([np.asarray(f, dtype=np.float64) for f in frame_embs])
    if frames.ndim != 2 or frames.shape[1] != text.shape[-1]:
        raise ValueError(f"dimension mismatch: frames {frames.shape}, text {text.shape}")
    norms = np.linalg.norm(frames, axis=1) * np.linalg.norm(text)
    scores = frames @ text / np.where(norms > 0, norms, 1.0)
    return int(np.argmax(scores))
