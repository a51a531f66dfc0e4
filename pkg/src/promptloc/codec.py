"""Azimuth label encoding, posterior decoding and the MAE / ACC metrics.

Azimuths are integer classes 1..180; index ``j - 1`` of a vector holds class ``j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

N_CLASSES = 180
DEFAULT_SIGMA = 8.0
DEFAULT_RHO = 5.0

CLASSES = np.arange(1, N_CLASSES + 1)


@dataclass
class DoADistribution:
    probs: np.ndarray
    kind: Literal["label", "posterior"] = "posterior"

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (N_CLASSES,):
            raise ValueError(f"expected {N_CLASSES} classes, got shape {self.probs.shape}")
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise ValueError("distribution values must be finite and nonnegative")
        if self.kind == "posterior" and abs(self.probs.sum() - 1.0) > 1e-6:
            raise ValueError(f"posterior sums to {self.probs.sum()}, not 1")

    def __getitem__(self, cls: int) -> float:
        return float(self.probs[cls - 1])


def encode_doa(theta: int, sigma: float = DEFAULT_SIGMA) -> DoADistribution:
    """Unnormalized Laplacian-shaped label ``exp(-|j - theta| / sigma)``, peak value 1."""
    if not 1 <= theta <= N_CLASSES or int(theta) != theta:
        raise ValueError(f"azimuth class {theta} outside 1..{N_CLASSES}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return DoADistribution(np.exp(-np.abs(CLASSES - theta) / sigma), kind="label")


def encode_batch(thetas: Sequence[int], sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    thetas = np.asarray(thetas)
    if np.any((thetas < 1) | (thetas > N_CLASSES)):
        raise ValueError("azimuth class outside 1..180")
    return np.exp(-np.abs(CLASSES[None, :] - thetas[:, None]) / sigma)


def decode_doa(dist) -> int:
    """Arg-max class; ties go to the smallest class."""
    probs = dist.probs if isinstance(dist, DoADistribution) else np.asarray(dist)
    return int(np.argmax(probs)) + 1


def _diffs(pairs) -> np.ndarray:
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no (truth, prediction) pairs given")
    return np.abs(arr[:, 0] - arr[:, 1])


def mae(pairs: Iterable[tuple[int, int]]) -> float:
    """Mean absolute azimuth error in degrees (linear, no wrap-around)."""
    return float(np.mean(_diffs(pairs)))


def acc(pairs: Iterable[tuple[int, int]], rho: float = DEFAULT_RHO) -> float:
    """Percentage of predictions within ``rho`` degrees (inclusive)."""
    d = _diffs(pairs)
    return 100.0 * np.count_nonzero(d <= rho) / len(d)


def report(pairs, rho: float = DEFAULT_RHO) -> dict:
    pairs = list(pairs)
    return {"n": len(pairs), "mae_deg": mae(pairs), "acc_pct": acc(pairs, rho), "rho": rho}


def report_line(pairs, rho: float = DEFAULT_RHO) -> str:
    """One JSON record ``{n, mae_deg, acc_pct, rho}`` for line-delimited logs."""
    return json.dumps(report(pairs, rho), sort_keys=True)
