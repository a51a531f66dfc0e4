"""Conformer building blocks with attention weights exposed for inspection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class ConformerConfig:
    model_dim: int = 96
    heads: int = 4
    conv_kernel: int = 7
    ffn_expansion: int = 4
    layer_count: int = 2

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")


def scaled_attention(q, k, v):
    """Softmax attention over the second-to-last axis; leading axes broadcast.

    Returns the attended values and the attention weights ``[..., n_q, n_k]``.
    """
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int = 1):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.last_weights = None

    def _split(self, x):
        *lead, n, d = x.shape
        return x.reshape(*lead, n, self.heads, d // self.heads).transpose(-2, -3)

    def forward(self, query, key_value):
        """``query [..., n_q, d]`` attends over ``key_value [..., n_k, d]`` (leading axes broadcast)."""
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key_value))
        v = self._split(self.v_proj(key_value))
        out, weights = scaled_attention(q, k, v)
        self.last_weights = weights.detach()
        out = out.transpose(-2, -3)
        out = out.reshape(*out.shape[:-2], -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, expansion: int = 4):
        super().__init__()
        self.lin1 = nn.Linear(dim, dim * expansion)
        self.lin2 = nn.Linear(dim * expansion, dim)

    def forward(self, x):
        return self.lin2(F.silu(self.lin1(x)))


class ConvModule(nn.Module):
    """Pointwise-GLU, depthwise conv, norm, SiLU, pointwise on ``[S, n, d]``.

    LayerNorm stands in for the usual BatchNorm so each sequence is processed
    independently of the rest of the batch.
    """

    def __init__(self, dim: int, kernel: int = 7):
        super().__init__()
        self.pw_in = nn.Linear(dim, 2 * dim)
        self.dw = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.pw_out = nn.Linear(dim, dim)

    def forward(self, x):
        *lead, n, d = x.shape
        h = F.glu(self.pw_in(x), dim=-1).reshape(-1, n, d)
        h = self.dw(h.transpose(1, 2)).transpose(1, 2).reshape(*lead, n, d)
        return self.pw_out(F.silu(self.norm(h)))


class ConformerBlock(nn.Module):
    """Half-step FFN, self-attention, convolution, half-step FFN, final LayerNorm (pre-norm)."""

    def __init__(self, dim: int, heads: int = 4, conv_kernel: int = 7, ffn_expansion: int = 4):
        super().__init__()
        self.ff1_norm = nn.LayerNorm(dim)
        self.ff1 = FeedForward(dim, ffn_expansion)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.conv_norm = nn.LayerNorm(dim)
        self.conv = ConvModule(dim, conv_kernel)
        self.ff2_norm = nn.LayerNorm(dim)
        self.ff2 = FeedForward(dim, ffn_expansion)
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, x):
        x = x + 0.5 * self.ff1(self.ff1_norm(x))
        h = self.attn_norm(x)
        x = x + self.attn(h, h)
        x = x + self.conv(self.conv_norm(x))
        x = x + 0.5 * self.ff2(self.ff2_norm(x))
        return self.out_norm(x)

    def zero_residual_branches(self):
        """Zero every branch output so the block reduces to its final LayerNorm."""
        with torch.no_grad():
            for lin in (self.ff1.lin2, self.attn.out_proj, self.conv.pw_out, self.ff2.lin2):
                lin.weight.zero_()
                lin.bias.zero_()


class Conformer(nn.Module):
    def __init__(self, cfg: ConformerConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(
            ConformerBlock(cfg.model_dim, cfg.heads, cfg.conv_kernel, cfg.ffn_expansion)
            for _ in range(cfg.layer_count)
        )

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x
