"""Target-selective mask, masked spectrogram assembly and the DoA posterior head."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..codec import N_CLASSES
from .ssm import TemporalConMamba


class MaskGenerator(nn.Module):
    """Temporal ConMamba followed by a per-bin MLP with sigmoid output: ``[B, T, F]``."""

    def __init__(self, d_model: int, d_state: int = 16, n_layers: int = 2, conv_kernel: int = 4,
                 bidirectional: bool = False):
        super().__init__()
        self.temporal = TemporalConMamba(d_model, d_state, n_layers, conv_kernel, bidirectional)
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.temporal(x)
        return torch.sigmoid(self.fc2(F.silu(self.fc1(h)))).squeeze(-1)


def apply_mask(x_r: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Multiply ``x_r [..., 2, T, F]`` by ``mask [..., T, F]`` broadcast over channels."""
    if x_r.shape[-2:] != mask.shape[-2:] or x_r.shape[:-3] != mask.shape[:-2]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match spectrogram {tuple(x_r.shape)}")
    return x_r * mask.unsqueeze(-3)


def assemble_clean(x_m: torch.Tensor, x_i: torch.Tensor) -> torch.Tensor:
    """Channel order: masked real ch0, ch1, then imaginary ch0, ch1."""
    if x_m.shape != x_i.shape:
        raise ValueError(f"shape mismatch: {tuple(x_m.shape)} vs {tuple(x_i.shape)}")
    return torch.cat([x_m, x_i], dim=-3)


class DoAHead(nn.Module):
    """Per-bin MLP over the 4 channels, mean over time, flatten, MLP, softmax.

    The per-bin stage can form inter-channel products (phase differences)
    before pooling; pooling raw spectra over time would average them away.
    """

    def __init__(self, n_freq: int, bin_dim: int = 8, hidden: int = 128, in_channels: int = 4,
                 n_classes: int = N_CLASSES):
        super().__init__()
        self.bin1 = nn.Linear(in_channels, bin_dim)
        self.bin2 = nn.Linear(bin_dim, bin_dim)
        self.fc1 = nn.Linear(n_freq * bin_dim, hidden)
        self.fc2 = nn.Linear(hidden, n_classes)

    def logits(self, x_clean: torch.Tensor) -> torch.Tensor:
        h = x_clean.movedim(-3, -1)  # [..., T, F, 4]
        h = self.bin2(F.silu(self.bin1(h)))
        h = h.mean(dim=-3).flatten(-2)
        return self.fc2(F.silu(self.fc1(h)))

    def forward(self, x_clean: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x_clean), dim=-1)
