"""Selective state-space layer and the gated ConMamba layer built on it.

The scan itself runs in the compiled kernel (or its numpy twin) through a
custom autograd function; everything around it is ordinary torch.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .._backend import kernels


def _np(t: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(t.detach().cpu().numpy())


class _SelectiveScan(torch.autograd.Function):
    @staticmethod
    def forward(ctx, u, delta, A, B, C):
        ctx.save_for_backward(u, delta, A, B, C)
        y = kernels.scan_forward(_np(u), _np(delta), _np(A), _np(B), _np(C))
        return torch.from_numpy(np.asarray(y)).to(u.dtype)

    @staticmethod
    def backward(ctx, dy):
        u, delta, A, B, C = ctx.saved_tensors
        grads = kernels.scan_backward(_np(u), _np(delta), _np(A), _np(B), _np(C), _np(dy.to(u.dtype)))
        return tuple(torch.from_numpy(np.asarray(g)).to(u.dtype) for g in grads)


def selective_scan(u, delta, A, B, C):
    """Diagonal selective recurrence with zero-order-hold discretization.

    ``h_k = exp(delta_k A) h_{k-1} + (exp(delta_k A) - 1) / A * B_k u_k`` and
    ``y_k = C_k . h_k``, per channel. Shapes: u, delta ``[S, n, d]``; A ``[d, N]``;
    B, C ``[S, n, N]``.
    """
    return _SelectiveScan.apply(u.contiguous(), delta.contiguous(), A.contiguous(),
                                B.contiguous(), C.contiguous())


def selective_scan_torch(u, delta, A, B, C):
    """Step-by-step torch version of :func:`selective_scan` (autograd-native, slow)."""
    S, n, d = u.shape
    h = u.new_zeros(S, d, A.shape[1])
    ys = []
    for k in range(n):
        a = torch.exp(delta[:, k, :, None] * A)
        h = a * h + (a - 1) / A * B[:, k, None, :] * u[:, k, :, None]
        ys.append(torch.einsum("sdn,sn->sd", h, C[:, k]))
    return torch.stack(ys, dim=1)


class SelectiveSSM(nn.Module):
    """Input-dependent step size, B and C; diagonal negative-real state matrix."""

    def __init__(self, d_model: int, d_state: int = 16, dt_min: float = 0.01, dt_max: float = 0.5):
        super().__init__()
        self.d_model = d_model
        self.d_state = d_state
        self.dt_proj = nn.Linear(d_model, d_model)
        self.b_proj = nn.Linear(d_model, d_state, bias=False)
        self.c_proj = nn.Linear(d_model, d_state, bias=False)
        self.A_log = nn.Parameter(torch.log(torch.arange(1, d_state + 1, dtype=torch.float32))
                                  .repeat(d_model, 1))
        with torch.no_grad():
            dt = torch.exp(torch.empty(d_model).uniform_(math.log(dt_min), math.log(dt_max)))
            self.dt_proj.bias.copy_(dt + torch.log(-torch.expm1(-dt)))  # softplus inverse
            self.dt_proj.weight.mul_(0.1)

    @property
    def A(self) -> torch.Tensor:
        return -torch.exp(self.A_log)

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        delta = F.softplus(self.dt_proj(u))
        return selective_scan(u, delta, self.A, self.b_proj(u), self.c_proj(u))


class ConMambaLayer(nn.Module):
    """``x + SiLU(W_g x) * LN(SSM(SiLU(conv(W_z x))))`` over sequences ``[S, n, d]``."""

    def __init__(self, d_model: int, d_state: int = 16, conv_kernel: int = 4,
                 bidirectional: bool = False):
        super().__init__()
        self.z_proj = nn.Linear(d_model, d_model)
        self.gate_proj = nn.Linear(d_model, d_model)
        # causal depthwise conv: left padding only, trailing outputs dropped
        self.conv = nn.Conv1d(d_model, d_model, conv_kernel, groups=d_model, padding=conv_kernel - 1)
        self.ssm = SelectiveSSM(d_model, d_state)
        self.ssm_rev = SelectiveSSM(d_model, d_state) if bidirectional else None
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n = x.shape[1]
        z = self.z_proj(x)
        z = self.conv(z.transpose(1, 2))[..., :n].transpose(1, 2)
        z = F.silu(z)
        y = self.ssm(z)
        if self.ssm_rev is not None:
            y = y + self.ssm_rev(z.flip(1)).flip(1)
        return x + F.silu(self.gate_proj(x)) * self.norm(y)


class FrequencyConMamba(nn.Module):
    """Per-frequency sequence model over time: ``[B, 2, T, F]`` -> ``[B, T, F, d]``."""

    def __init__(self, d_model: int, d_state: int = 16, n_layers: int = 2, in_channels: int = 2,
                 conv_kernel: int = 4, bidirectional: bool = False):
        super().__init__()
        self.in_proj = nn.Linear(in_channels, d_model)
        self.layers = nn.ModuleList(
            ConMambaLayer(d_model, d_state, conv_kernel, bidirectional) for _ in range(n_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, t, f = x.shape
        h = self.in_proj(x.permute(0, 3, 2, 1))  # [B, F, T, d]
        h = h.reshape(b * f, t, -1)
        for layer in self.layers:
            h = layer(h)
        return h.reshape(b, f, t, -1).transpose(1, 2)


class TemporalConMamba(nn.Module):
    """Per-frame sequence model over frequency: ``[B, T, F, d]`` -> same shape."""

    def __init__(self, d_model: int, d_state: int = 16, n_layers: int = 2, conv_kernel: int = 4,
                 bidirectional: bool = False):
        super().__init__()
        self.layers = nn.ModuleList(
            ConMambaLayer(d_model, d_state, conv_kernel, bidirectional) for _ in range(n_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, f, d = x.shape
        h = x.reshape(b * t, f, d)
        for layer in self.layers:
            h = layer(h)
        return h.reshape(b, t, f, d)
