"""Pipeline configuration with JSON round-trip and flag overrides.

Defaults follow the reference operating point: model dimension 256 with
4-head attention, 12 encoder layers, feedforward size 2048, cross-channel
context of 2 frames, 1 ASR decoder layer, 2 speaker decoder layers,
192-dimensional profiles over a pool of 8 enrolled speakers, and a
speaker loss weight of 0.1. The full-scale training recipe (Adam,
learning rate 5e-4, pre-training with zeroed speaker inputs) is recorded
here for documentation. The toy trainer defaults to Adam at 3e-3: plain
fixed-step gradient descent is available via optimizer="sgd" but does not
reach zero training error on the overfit sets at any stable step size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass
class PipelineConfig:
    # features
    feature_kind: str = "mel"          # "mel" | "magphase"
    channels: int = 2
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    sample_rate: int = 16000
    # model
    dim: int = 256
    heads: int = 4
    context_frames: int = 2
    encoder_layers: int = 12
    ff_dim: int = 2048
    asr_decoder_layers: int = 1
    speaker_decoder_layers: int = 2
    profile_dim: int = 192
    conv_kernel: int = 15
    fusion_kernel: int = 3
    # speakers
    n_profiles: int = 8
    speaker_weight: float = 0.1
    include_sc_speaker_loss: bool = True
    # simulation
    n_speakers_min: int = 1
    n_speakers_max: int = 3
    rir_max_order: int | None = None   # None = adaptive with order cap 40
    rt60_s: float | None = None        # None = sampled per room
    words_per_speaker_min: int = 2
    words_per_speaker_max: int = 5
    # training (toy scale); reference full-scale recipe: adam, lr 5e-4
    optimizer: str = "adam"
    learning_rate: float = 3e-3
    steps: int = 2000
    max_decode_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.feature_kind not in ("mel", "magphase"):
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if not 1 <= self.channels <= 4:
            raise ValueError("channels must be in 1..4")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    def override(self, **kwargs) -> "PipelineConfig":
        data = self.to_json()
        for key, value in kwargs.items():
            if value is not None:
                data[key] = value
        return self.from_json(data)
