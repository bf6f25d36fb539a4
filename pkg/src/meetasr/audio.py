"""Multichannel waveform container and WAV file I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass
class MultichannelWave:
    """C x L signal, one row per microphone, float amplitudes."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2 or self.samples.shape[0] < 1 or self.samples.shape[1] < 1:
            raise ValueError("samples must be a non-empty C x L matrix")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate


def read_wav(path: str | Path) -> MultichannelWave:
    """Read a PCM16 or float32 WAV file into a MultichannelWave."""
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        samples = data.astype(np.float64)
    return MultichannelWave(samples=samples.T, sample_rate=int(rate))


def write_wav(path: str | Path, wave: MultichannelWave) -> None:
    """Write a MultichannelWave as float32 WAV (L x C layout on disk)."""
    data = wave.samples.T.astype(np.float32)
    wavfile.write(str(path), wave.sample_rate, data)
