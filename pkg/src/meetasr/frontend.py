"""Waveform-to-feature frontends.

Two alternative encoder inputs: log-Mel filterbank features, and a
magnitude+phase representation (STFT magnitude stacked with the cosine
and sine of the phase). Each passes through a small stack of
depthwise-separable 2-D convolutions, shared across microphone channels,
producing a C x T x A array with a total time subsampling factor of 4.
A final linear layer maps A to the model dimension.

The numpy feature extractors are pure functions; the conv modules hold
immutable weights after construction and are safe to call concurrently
on distinct inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .audio import MultichannelWave

LOG_FLOOR = 1e-10


@dataclass
class StftTensor:
    """Per-channel STFT split into magnitude and phase, C x T_stft x G."""

    magnitude: np.ndarray
    phase: np.ndarray
    window_ms: float
    hop_ms: float
    sample_rate: int

    @property
    def n_bins(self) -> int:
        return self.magnitude.shape[2]

    @property
    def n_frames(self) -> int:
        return self.magnitude.shape[1]


@dataclass
class MelFeatureTensor:
    """Log-Mel energies, C x T_stft x M."""

    values: np.ndarray


@dataclass
class MagPhaseFeatureTensor:
    """C x T_stft x 3 x G planes ordered (magnitude, cos phase, sin phase)."""

    values: np.ndarray


@dataclass
class FrontendFeatures:
    """Subsampled conv features, C x T x A with T = ceil(T_stft / 4)."""

    values: torch.Tensor


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(wave: MultichannelWave, window_ms: float = 25.0, hop_ms: float = 10.0) -> StftTensor:
    """Centered STFT with reflect padding; T_stft = ceil(L / hop)."""
    if hop_ms <= 0 or window_ms < hop_ms:
        raise ValueError("require window_ms >= hop_ms > 0")
    fs = wave.sample_rate
    win = int(round(fs * window_ms / 1000.0))
    hop = int(round(fs * hop_ms / 1000.0))
    n_fft = win
    half = n_fft // 2
    if wave.n_samples <= half:
        raise ValueError(f"signal too short for {window_ms} ms window: {wave.n_samples} samples")

    n_frames = math.ceil(wave.n_samples / hop)
    padded = np.pad(wave.samples, ((0, 0), (half, half)), mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft, axis=1)[:, ::hop, :]
    frames = frames[:, :n_frames, :]
    spec = np.fft.rfft(frames * _hann_periodic(n_fft), axis=-1)
    return StftTensor(
        magnitude=np.abs(spec),
        phase=np.angle(spec),
        window_ms=window_ms,
        hop_ms=hop_ms,
        sample_rate=fs,
    )


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_bins: int, sample_rate: int) -> np.ndarray:
    """Triangular filterbank (n_mels x G) spanning 0 to Nyquist, HTK mel scale."""
    freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / (ctr - lo)
        falling = (hi - freqs) / (hi - ctr)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def log_mel(spec: StftTensor, n_mels: int = 80) -> MelFeatureTensor:
    """log(filterbank @ magnitude + floor), shape C x T_stft x n_mels."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > spec.n_bins:
        raise ValueError(f"n_mels={n_mels} exceeds {spec.n_bins} STFT bins")
    fb = mel_filterbank(n_mels, spec.n_bins, spec.sample_rate)
    return MelFeatureTensor(values=np.log(spec.magnitude @ fb.T + LOG_FLOOR))


def mag_phase_features(spec: StftTensor) -> MagPhaseFeatureTensor:
    """Stack magnitude, cos(phase) and sin(phase) into C x T_stft x 3 x G."""
    planes = np.stack([spec.magnitude, np.cos(spec.phase), np.sin(spec.phase)], axis=2)
    return MagPhaseFeatureTensor(values=planes)


class _SeparableConv2d(nn.Module):
    """Depthwise k x k convolution followed by a pointwise 1x1 convolution."""

    def __init__(self, in_ch: int, out_ch: int, stride, kernel_size: int = 3):
        super().__init__()
        self.depthwise = nn.Conv2d(
            in_ch, in_ch, kernel_size, stride=stride,
            padding=kernel_size // 2, groups=in_ch,
        )
        self.pointwise = nn.Conv2d(in_ch, out_ch, 1)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def _check_min_frames(n_frames: int) -> None:
    if n_frames < 4:
        raise ValueError(f"need at least 4 STFT frames to subsample twice, got {n_frames}")


class MelConvFrontend(nn.Module):
    """Two separable conv layers on log-Mel input, stride 2 in time and
    frequency each, weights shared across microphone channels.

    Output feature size A = conv_channels * ceil(n_mels / 4).
    """

    def __init__(self, n_mels: int = 80, conv_channels: int = 32):
        super().__init__()
        self.n_mels = n_mels
        self.conv1 = _SeparableConv2d(1, conv_channels, stride=(2, 2))
        self.conv2 = _SeparableConv2d(conv_channels, conv_channels, stride=(2, 2))
        self.act = nn.SiLU()
        self.feature_dim = conv_channels * math.ceil(n_mels / 4)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        # mel: (C, T_stft, M) -> (C, T, A); channels ride the batch axis
        _check_min_frames(mel.shape[1])
        x = mel[:, None, :, :]
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        c, ch, t, f = x.shape
        return x.permute(0, 2, 1, 3).reshape(c, t, ch * f)


class MagPhaseConvFrontend(nn.Module):
    """Three separable conv layers on magnitude+phase input. The first
    layer fuses the (magnitude, cos, sin) planes and halves the frequency
    axis; the next two mirror the Mel path with stride 2 in time and
    frequency. Output feature size A = conv_channels * ceil(n_bins / 8).
    """

    def __init__(self, n_bins: int = 201, conv_channels: int = 32):
        super().__init__()
        self.n_bins = n_bins
        self.conv1 = _SeparableConv2d(3, conv_channels, stride=(1, 2))
        self.conv2 = _SeparableConv2d(conv_channels, conv_channels, stride=(2, 2))
        self.conv3 = _SeparableConv2d(conv_channels, conv_channels, stride=(2, 2))
        self.act = nn.SiLU()
        self.feature_dim = conv_channels * math.ceil(n_bins / 8)

    def forward(self, planes: torch.Tensor) -> torch.Tensor:
        # planes: (C, T_stft, 3, G) -> (C, T, A)
        _check_min_frames(planes.shape[1])
        x = planes.permute(0, 2, 1, 3)
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        x = self.act(self.conv3(x))
        c, ch, t, f = x.shape
        return x.permute(0, 2, 1, 3).reshape(c, t, ch * f)


class FeatureProjection(nn.Module):
    """Affine map A -> D applied per channel and frame, shared weights."""

    def __init__(self, feature_dim: int, model_dim: int):
        super().__init__()
        self.linear = nn.Linear(feature_dim, model_dim)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.linear(feats)
