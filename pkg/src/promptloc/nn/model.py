"""The full prompt-conditioned localizer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

from ..features import FRAME_LEN
from .fusion import AblationFuser, PromptFusion
from .mask import DoAHead, MaskGenerator, apply_mask, assemble_clean
from .matching import PromptAligner, SemanticSpatialMatching
from .ssm import FrequencyConMamba

ALIGNMENT_MODES = ("matching", "concat", "film")
PROMPT_MODES = ("av", "v_only", "a_only", "none")


@dataclass
class ModelConfig:
    n_freq: int = FRAME_LEN // 2 + 1
    d_audio: int = 32
    d_visual: int = 64
    d_hidden: int = 32
    d_state: int = 16
    freq_layers: int = 2
    temporal_layers: int = 2
    ssm_conv_kernel: int = 4
    bidirectional: bool = False
    fusion_layers: int = 2
    fusion_heads: int = 4
    conv_kernel: int = 7
    ffn_expansion: int = 4
    matching_heads: int = 1
    alignment: str = "matching"
    prompt_mode: str = "av"
    mask_imag: bool = False
    head_bin_dim: int = 8
    head_hidden: int = 128

    def __post_init__(self):
        if self.alignment not in ALIGNMENT_MODES:
            raise ValueError(f"alignment must be one of {ALIGNMENT_MODES}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Reduced widths and depths that train in minutes on one CPU core."""
        base = dict(d_hidden=8, d_state=8, freq_layers=1, temporal_layers=1)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class LocalizerNet(nn.Module):
    """Mixture spectrogram + semantic prompt -> DoA posterior over 180 classes.

    Inputs: ``x_r, x_i [B, 2, T, F]``, visual embedding ``fv [B, d_V]`` and
    audio semantic sequence ``fa [B, t, d_A]``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_hidden
        self.fusion = PromptFusion(cfg.d_audio, cfg.d_visual, cfg.fusion_heads, cfg.conv_kernel,
                                   cfg.ffn_expansion, cfg.fusion_layers)
        self.aligner = PromptAligner(self.fusion.out_dim, d)
        self.freq = FrequencyConMamba(d, cfg.d_state, cfg.freq_layers, 2, cfg.ssm_conv_kernel,
                                      cfg.bidirectional)
        if cfg.alignment == "matching":
            self.align = SemanticSpatialMatching(d, cfg.matching_heads, cfg.conv_kernel, cfg.ffn_expansion)
        else:
            self.align = AblationFuser(cfg.alignment, d, d)
        self.mask_gen = MaskGenerator(d, cfg.d_state, cfg.temporal_layers, cfg.ssm_conv_kernel,
                                      cfg.bidirectional)
        self.head = DoAHead(cfg.n_freq, cfg.head_bin_dim, cfg.head_hidden)

    def prompt(self, fv: torch.Tensor, fa: torch.Tensor) -> torch.Tensor:
        mode = self.cfg.prompt_mode
        if mode in ("a_only", "none"):
            fv = torch.zeros_like(fv)
        if mode in ("v_only", "none"):
            fa = torch.zeros_like(fa)
        return self.fusion(fv, fa)

    def forward(self, x_r, x_i, fv, fa) -> dict:
        n_frames = x_r.shape[-2]
        prompt = self.aligner(self.prompt(fv, fa), n_frames)
        spatial = self.freq(x_r)
        matched = self.align(prompt, spatial)
        mask = self.mask_gen(matched)
        x_m = apply_mask(x_r, mask)
        x_i_used = apply_mask(x_i, mask) if self.cfg.mask_imag else x_i
        logits = self.head.logits(assemble_clean(x_m, x_i_used))
        return {
            "logits": logits,
            "posterior": torch.softmax(logits, dim=-1),
            "mask": mask,
            "x_m": x_m,
        }
