"""Prompt fusion: visual + audio semantic features -> prompt sequence.

Also holds the two simpler alignment blocks (concatenation and FiLM) used
in place of semantic-spatial matching for ablations.
"""

from __future__ import annotations

import torch
from torch import nn

from .conformer import Conformer, ConformerConfig


def broadcast_visual(v: torch.Tensor, t: int) -> torch.Tensor:
    """Repeat a visual embedding ``[..., d_V]`` along a new time axis: ``[..., t, d_V]``."""
    if t < 1:
        raise ValueError("t must be at least 1")
    return v.unsqueeze(-2).expand(*v.shape[:-1], t, v.shape[-1])


class PromptFusion(nn.Module):
    """Concatenate [visual, audio] per semantic frame and run a Conformer over time."""

    def __init__(self, d_audio: int = 32, d_visual: int = 64, heads: int = 4, conv_kernel: int = 7,
                 ffn_expansion: int = 4, layers: int = 2):
        super().__init__()
        self.d_audio = d_audio
        self.d_visual = d_visual
        self.conformer = Conformer(ConformerConfig(d_audio + d_visual, heads, conv_kernel,
                                                   ffn_expansion, layers))

    @property
    def out_dim(self) -> int:
        return self.d_audio + self.d_visual

    def forward(self, fv: torch.Tensor, fa: torch.Tensor) -> torch.Tensor:
        """``fv`` is ``[B, d_V]`` (broadcast over time) or ``[B, t, d_V]``; ``fa`` is ``[B, t, d_A]``."""
        if fv.dim() == fa.dim() - 1:
            fv = broadcast_visual(fv, fa.shape[-2])
        if fv.shape[-2] != fa.shape[-2]:
            raise ValueError(f"time mismatch: visual t={fv.shape[-2]}, audio t={fa.shape[-2]}")
        return self.conformer(torch.cat([fv, fa], dim=-1))


def fuse(fv: torch.Tensor, fa: torch.Tensor, fusion: PromptFusion) -> torch.Tensor:
    """Unbatched fusion of ``fv [t, d_V]`` and ``fa [t, d_A]`` into ``[t, d_V + d_A]``."""
    if fv.shape[0] != fa.shape[0]:
        raise ValueError(f"time mismatch: visual t={fv.shape[0]}, audio t={fa.shape[0]}")
    return fusion(fv.unsqueeze(0), fa.unsqueeze(0)).squeeze(0)


class AblationFuser(nn.Module):
    """Align a prompt sequence ``[B, T, d]`` with spatial features ``[B, T, F, d]``.

    ``concat``: separate linear maps for each input, concatenation, output linear.
    ``film``: the prompt predicts a per-channel scale and shift for the spatial features.
    """

    MODES = ("concat", "film")

    def __init__(self, mode: str, d_semantic: int, d_spatial: int, d_out: int | None = None):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"unknown ablation mode {mode!r}; expected one of {self.MODES}")
        self.mode = mode
        d_out = d_out or d_spatial
        if mode == "concat":
            self.sem_fc = nn.Linear(d_semantic, d_spatial)
            self.spa_fc = nn.Linear(d_spatial, d_spatial)
            self.out_fc = nn.Linear(2 * d_spatial, d_out)
        else:
            if d_out != d_spatial:
                raise ValueError("FiLM keeps the spatial feature width")
            self.gamma = nn.Linear(d_semantic, d_spatial)
            self.beta = nn.Linear(d_semantic, d_spatial)

    def forward(self, semantic: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
        n_freq = spatial.shape[2]
        if self.mode == "concat":
            sem = self.sem_fc(semantic).unsqueeze(2).expand(-1, -1, n_freq, -1)
            return self.out_fc(torch.cat([sem, self.spa_fc(spatial)], dim=-1))
        return self.gamma(semantic).unsqueeze(2) * spatial + self.beta(semantic).unsqueeze(2)

    def set_neutral(self):
        """FiLM only: gamma = 1, beta = 0 regardless of the prompt."""
        with torch.no_grad():
            self.gamma.weight.zero_()
            self.gamma.bias.fill_(1.0)
            self.beta.weight.zero_()
            self.beta.bias.zero_()
