"""Semantic-spatial matching: cross-attention then self-attention Conformer blocks.

Both blocks run independently for every frequency bin, attending over time.
The prompt sequence provides the queries of the cross-attention block and is
shared by all frequencies, so the ``[B, T, F, d]`` layout survives the block.
"""

from __future__ import annotations

import torch
from torch import nn

from .conformer import ConvModule, FeedForward, MultiHeadAttention


def resample_index(t: int, n_frames: int) -> torch.Tensor:
    """Nearest-neighbour map from ``n_frames`` STFT frames to ``t`` semantic frames."""
    return torch.div(torch.arange(n_frames) * t, n_frames, rounding_mode="floor")


class PromptAligner(nn.Module):
    """Project ``[B, t, d_AV]`` prompts to ``d_h`` and resample to ``T`` frames."""

    def __init__(self, d_prompt: int, d_model: int):
        super().__init__()
        self.proj = nn.Linear(d_prompt, d_model)

    def forward(self, prompt: torch.Tensor, n_frames: int) -> torch.Tensor:
        idx = resample_index(prompt.shape[-2], n_frames).to(prompt.device)
        return self.proj(prompt).index_select(-2, idx)


class CrossAttentionConformer(nn.Module):
    def __init__(self, d_model: int, heads: int = 1, conv_kernel: int = 7, ffn_expansion: int = 4):
        super().__init__()
        self.q_norm = nn.LayerNorm(d_model)
        self.kv_norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.conv_norm = nn.LayerNorm(d_model)
        self.conv = ConvModule(d_model, conv_kernel)
        self.ff_norm = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, ffn_expansion)
        self.out_norm = nn.LayerNorm(d_model)

    def attend(self, prompt: torch.Tensor, spatial_bft: torch.Tensor) -> torch.Tensor:
        """Raw cross-attention output ``[B, F, T, d]``; queries broadcast over F."""
        return self.attn(self.q_norm(prompt).unsqueeze(1), self.kv_norm(spatial_bft))

    def forward(self, prompt: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
        """``prompt [B, T, d]`` with ``spatial [B, T, F, d]`` -> ``[B, T, F, d]``."""
        kv = spatial.transpose(1, 2)  # [B, F, T, d]
        # both streams feed the residual: the prompt alone would wipe out per-bin
        # detail, the spatial stream alone would only see the prompt through
        # attention weights
        x = prompt.unsqueeze(1) + kv + self.attend(prompt, kv)
        x = x + self.conv(self.conv_norm(x))
        x = x + self.ff(self.ff_norm(x))
        return self.out_norm(x).transpose(1, 2)


class SelfAttentionConformer(nn.Module):
    def __init__(self, d_model: int, heads: int = 1, conv_kernel: int = 7, ffn_expansion: int = 4):
        super().__init__()
        self.attn_norm = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.conv_norm = nn.LayerNorm(d_model)
        self.conv = ConvModule(d_model, conv_kernel)
        self.ff_norm = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, ffn_expansion)
        self.out_norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.transpose(1, 2)  # [B, F, T, d]
        h = self.attn_norm(x)
        x = x + self.attn(h, h)
        x = x + self.conv(self.conv_norm(x))
        x = x + self.ff(self.ff_norm(x))
        return self.out_norm(x).transpose(1, 2)


class SemanticSpatialMatching(nn.Module):
    def __init__(self, d_model: int, heads: int = 1, conv_kernel: int = 7, ffn_expansion: int = 4):
        super().__init__()
        self.cac = CrossAttentionConformer(d_model, heads, conv_kernel, ffn_expansion)
        self.sac = SelfAttentionConformer(d_model, heads, conv_kernel, ffn_expansion)

    def forward(self, prompt: torch.Tensor, spatial: torch.Tensor) -> torch.Tensor:
        return self.sac(self.cac(prompt, spatial))
