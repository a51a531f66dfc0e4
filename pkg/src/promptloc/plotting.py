"""Posterior plots: target and interferer label encodings against the model output."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .codec import CLASSES, DEFAULT_SIGMA, N_CLASSES, encode_doa  # noqa: E402

DUMP_KEYS = ("posterior", "target_azimuth", "interferer_azimuth")


def load_dump(path) -> dict:
    """Read a posterior dump written by ``infer``; raises ValueError when malformed."""
    try:
        with open(path) as fh:
            dump = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(dump, dict):
        raise ValueError(f"{path}: expected a JSON object")
    missing = [k for k in DUMP_KEYS if dump.get(k) is None]
    if missing:
        raise ValueError(f"{path}: missing fields {missing}")
    post = np.asarray(dump["posterior"], dtype=np.float64)
    if post.shape != (N_CLASSES,) or not np.all(np.isfinite(post)):
        raise ValueError(f"{path}: posterior must be {N_CLASSES} finite values")
    for k in ("target_azimuth", "interferer_azimuth"):
        if not 1 <= int(dump[k]) <= N_CLASSES:
            raise ValueError(f"{path}: {k} outside 1..{N_CLASSES}")
    return dump


def plot_posterior(posterior, target_azimuth: int, interferer_azimuth: int, path=None,
                   sigma: float = DEFAULT_SIGMA, title: str | None = None):
    """Three curves over classes 1..180: both ground-truth encodings and the posterior.

    The posterior is drawn on a twin axis since it sums to one while the
    encodings peak at one. Returns the figure; saves it when ``path`` is given.
    """
    posterior = np.asarray(posterior, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 3.2))
    ax.plot(CLASSES, encode_doa(int(target_azimuth), sigma).probs, color="tab:blue",
            label=f"target ({int(target_azimuth)} deg)")
    ax.plot(CLASSES, encode_doa(int(interferer_azimuth), sigma).probs, color="tab:orange",
            label=f"interferer ({int(interferer_azimuth)} deg)")
    ax.set_xlim(1, N_CLASSES)
    ax.set_xlabel("azimuth class (deg)")
    ax.set_ylabel("label encoding")
    twin = ax.twinx()
    twin.plot(CLASSES, posterior, color="tab:green", label="model posterior")
    twin.set_ylabel("posterior")
    lines = ax.get_lines() + twin.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right", fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
    return fig


def plot_dump(dump_path, out_path, sigma: float = DEFAULT_SIGMA) -> Path:
    dump = load_dump(dump_path)
    fig = plot_posterior(dump["posterior"], dump["target_azimuth"], dump["interferer_azimuth"],
                         out_path, sigma, title=dump.get("title"))
    plt.close(fig)
    return Path(out_path)
