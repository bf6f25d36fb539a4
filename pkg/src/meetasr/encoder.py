"""Multichannel ASR encoder.

Conformer blocks whose first feedforward sublayer is replaced by
multi-frame cross-channel attention: at every time step the queries come
from the current frame of each channel while keys and values span all
channels over a +-F frame context window. A final learned convolution
fusion collapses the channel axis, yielding one encoded sequence T x D.

Forward passes are pure with respect to the (immutable) weights, so
distinct sequences may be processed concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class EncoderConfig:
    dim: int = 256
    heads: int = 4
    context_frames: int = 2
    layers: int = 12
    ff_dim: int = 2048
    conv_kernel: int = 15
    fusion_kernel: int = 3

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.context_frames < 0:
            raise ValueError("context_frames must be >= 0")


def context_expand(x: torch.Tensor, context_frames: int) -> torch.Tensor:
    """Gather frames t-F .. t+F across all channels for each time step.

    Input (T, C, D) -> output (T, (2F+1)*C, D), frame-major on the second
    axis; out-of-range frames are zero-padded.
    """
    if context_frames < 0:
        raise ValueError("context_frames must be >= 0")
    t, c, d = x.shape
    if context_frames == 0:
        return x
    f = context_frames
    pad = x.new_zeros(f, c, d)
    padded = torch.cat([pad, x, pad], dim=0)
    windows = torch.stack([padded[j : j + t] for j in range(2 * f + 1)], dim=1)
    return windows.reshape(t, (2 * f + 1) * c, d)


class MultiFrameCrossChannelAttention(nn.Module):
    """Attention over channels and context frames at each time step.

    Queries are the per-channel frames at time t; keys and values are the
    context-expanded frames, so each attention row spans (2F+1)*C entries.
    Heads use per-head scaling 1/sqrt(D/H) and are concatenated then
    projected back to D.
    """

    def __init__(self, dim: int, heads: int, context_frames: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError("dim must be divisible by heads")
        self.dim = dim
        self.heads = heads
        self.context_frames = context_frames
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        # x: (T, C, D)
        t, c, d = x.shape
        if d != self.dim:
            raise ValueError(f"expected last dim {self.dim}, got {d}")
        h = self.heads
        dh = d // h
        expanded = context_expand(x, self.context_frames)
        cx = expanded.shape[1]

        q = self.q_proj(x).reshape(t, c, h, dh).permute(0, 2, 1, 3)
        k = self.k_proj(expanded).reshape(t, cx, h, dh).permute(0, 2, 1, 3)
        v = self.v_proj(expanded).reshape(t, cx, h, dh).permute(0, 2, 1, 3)

        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
        weights = torch.softmax(scores, dim=-1)  # (T, H, C, (2F+1)*C)
        out = weights @ v
        out = out.permute(0, 2, 1, 3).reshape(t, c, d)
        out = self.out_proj(out)
        if return_weights:
            return out, weights
        return out


class _FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, ff_dim), nn.SiLU(), nn.Linear(ff_dim, dim))

    def forward(self, x):
        return self.net(x)


class _ConvModule(nn.Module):
    """Conformer convolution sublayer over time, applied per channel."""

    def __init__(self, dim: int, kernel: int):
        super().__init__()
        self.pointwise1 = nn.Conv1d(dim, 2 * dim, 1)
        self.depthwise = nn.Conv1d(dim, dim, kernel, padding=kernel // 2, groups=dim)
        self.norm = nn.LayerNorm(dim)
        self.pointwise2 = nn.Conv1d(dim, dim, 1)
        self.act = nn.SiLU()

    def forward(self, x):
        # x: (T, C, D) -> conv over T independently per channel
        y = x.permute(1, 2, 0)  # (C, D, T)
        y = nn.functional.glu(self.pointwise1(y), dim=1)
        y = self.depthwise(y)
        y = self.norm(y.transpose(1, 2)).transpose(1, 2)
        y = self.pointwise2(self.act(y))
        return y.permute(2, 0, 1)


class ConformerBlock(nn.Module):
    """Pre-norm Conformer block with the first feedforward replaced by
    multi-frame cross-channel attention. Sublayer order: cross-channel
    attention, per-channel time self-attention, convolution module,
    feedforward, final layer norm; residuals throughout.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cross_channel = MultiFrameCrossChannelAttention(cfg.dim, cfg.heads, cfg.context_frames)
        self.time_attn = nn.MultiheadAttention(cfg.dim, cfg.heads, batch_first=True)
        self.conv = _ConvModule(cfg.dim, cfg.conv_kernel)
        self.ff = _FeedForward(cfg.dim, cfg.ff_dim)
        self.norm_cc = nn.LayerNorm(cfg.dim)
        self.norm_attn = nn.LayerNorm(cfg.dim)
        self.norm_conv = nn.LayerNorm(cfg.dim)
        self.norm_ff = nn.LayerNorm(cfg.dim)
        self.norm_out = nn.LayerNorm(cfg.dim)

    def _time_attention(self, x):
        # (T, C, D) -> per-channel self-attention over the time axis
        y = x.permute(1, 0, 2)  # (C, T, D), channels as batch
        y, _ = self.time_attn(y, y, y, need_weights=False)
        return y.permute(1, 0, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.cross_channel(self.norm_cc(x))
        x = x + self._time_attention(self.norm_attn(x))
        x = x + self.conv(self.norm_conv(x))
        x = x + self.ff(self.norm_ff(x))
        return self.norm_out(x)


class ChannelFusion(nn.Module):
    """Learned convolution fusion collapsing C channel streams to one.

    Reduction chains: 1 -> passthrough, 2 -> 1, 3 -> 2 -> 1, 4 -> 2 -> 1.
    Each stage is a conv whose in/out channels are the stream counts and
    whose kernel spans the (T, D) plane with same-padding, so T x D is
    preserved. Stages are purely linear.
    """

    def __init__(self, channels: int, kernel: int = 3):
        super().__init__()
        if channels < 1 or channels > 4:
            raise ValueError(f"channel fusion supports 1..4 channels, got {channels}")
        self.channels = channels
        chain = {1: [], 2: [(2, 1)], 3: [(3, 2), (2, 1)], 4: [(4, 2), (2, 1)]}[channels]
        self.stages = nn.ModuleList(
            nn.Conv2d(cin, cout, kernel, padding=kernel // 2) for cin, cout in chain
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (C, T, D) -> (T, D)
        if x.shape[0] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[0]}")
        if self.channels == 1:
            return x[0]
        y = x[None]  # (1, C, T, D)
        for stage in self.stages:
            y = stage(y)
        return y[0, 0]


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Standard absolute sinusoidal positional encodings, (n, dim)."""
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    idx = torch.arange(0, dim, 2, dtype=torch.float64)
    angles = pos / torch.pow(10000.0, idx / dim)
    enc = torch.zeros(n, dim, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return enc.to(dtype)


@dataclass
class EncoderOutput:
    per_channel: torch.Tensor  # (C, T, D)
    fused: torch.Tensor        # (T, D)


class MultichannelEncoder(nn.Module):
    """Stack of cross-channel Conformer blocks followed by channel fusion."""

    def __init__(self, cfg: EncoderConfig, channels: int):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.layers))
        self.fusion = ChannelFusion(channels, cfg.fusion_kernel)

    def forward(self, features: torch.Tensor) -> EncoderOutput:
        # features: (C, T, D)
        c, t, d = features.shape
        pos = sinusoidal_positions(t, d, dtype=features.dtype).to(features.device)
        x = (features + pos[None]).permute(1, 0, 2)  # (T, C, D)
        for block in self.blocks:
            x = block(x)
        per_channel = x.permute(1, 0, 2)
        return EncoderOutput(per_channel=per_channel, fused=self.fusion(per_channel))
