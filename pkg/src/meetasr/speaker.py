"""Speaker side of the pipeline.

Holds the enrollment profile matrix (E x K, one L2-normalized column per
enrolled speaker), a deterministic frame-level speaker encoder stub, the
two-layer speaker decoder that turns a token prefix into a speaker query,
and the posterior / weighted-profile operations over enrolled profiles.

The real embedding extractor is external; embeddings can be supplied via
the JSON-indexed binary container instead of the stub (see
serialization.read_embeddings). The stub exists so everything runs
self-contained.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .audio import MultichannelWave
from .frontend import _SeparableConv2d, log_mel, stft


@dataclass
class SpeakerProfileMatrix:
    """E x K matrix of enrolled speaker embeddings, columns L2-normalized."""

    matrix: np.ndarray
    speaker_ids: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise ValueError("profile matrix must be E x K with K >= 1")
        if len(self.speaker_ids) != self.matrix.shape[1]:
            raise ValueError("one speaker id per column required")
        norms = np.linalg.norm(self.matrix, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("profile columns must be L2-normalized")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_speakers(self) -> int:
        return self.matrix.shape[1]

    def index_of(self, speaker_id: str) -> int:
        return self.speaker_ids.index(speaker_id)


@dataclass
class SpeakerPosterior:
    """Distribution over enrolled speakers for one output position."""

    probs: np.ndarray
    query: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-6:
            raise ValueError("posterior must be a probability vector")

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


def build_profile_matrix(enrollments: list[tuple[str, list[np.ndarray]]]) -> SpeakerProfileMatrix:
    """Mean of each speaker's enrollment embeddings, L2-normalized, in input order."""
    if not enrollments:
        raise ValueError("need at least one enrolled speaker")
    ids, columns = [], []
    for speaker_id, vectors in enrollments:
        if not len(vectors):
            raise ValueError(f"speaker {speaker_id!r} has no enrollment embeddings")
        mean = np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0:
            raise ValueError(f"speaker {speaker_id!r} has a zero mean embedding")
        ids.append(speaker_id)
        columns.append(mean / norm)
    return SpeakerProfileMatrix(matrix=np.stack(columns, axis=1), speaker_ids=ids)


def speaker_posterior(query: np.ndarray, profiles: SpeakerProfileMatrix) -> SpeakerPosterior:
    """softmax(S^T q) over the K enrolled speakers."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (profiles.dim,):
        raise ValueError(f"query must have dim {profiles.dim}")
    logits = profiles.matrix.T @ q
    logits = logits - logits.max()
    e = np.exp(logits)
    return SpeakerPosterior(probs=e / e.sum(), query=q)


def weighted_profile(posterior: SpeakerPosterior, profiles: SpeakerProfileMatrix) -> np.ndarray:
    """S @ probs: posterior-weighted mix of profile columns (convex combination)."""
    if posterior.probs.shape != (profiles.n_speakers,):
        raise ValueError("posterior length must match the number of profiles")
    return profiles.matrix @ posterior.probs


class SpeakerEncoder(nn.Module):
    """Frame-level speaker embedding stub.

    Channel-averaged log-Mel features pass through two separable conv
    layers (matching the ASR frontend's time subsampling of 4) and a
    linear layer to the model dimension, giving T x D frame embeddings.
    Externally computed frame embeddings may be used in its place.
    """

    def __init__(self, n_mels: int = 80, model_dim: int = 256, conv_channels: int = 32):
        super().__init__()
        self.n_mels = n_mels
        self.conv1 = _SeparableConv2d(1, conv_channels, stride=(2, 2))
        self.conv2 = _SeparableConv2d(conv_channels, conv_channels, stride=(2, 2))
        self.act = nn.SiLU()
        self.linear = nn.Linear(conv_channels * math.ceil(n_mels / 4), model_dim)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        # mel: (C, T_stft, M) or (T_stft, M); channels are averaged first
        if mel.dim() == 3:
            mel = mel.mean(dim=0)
        x = mel[None, None]
        x = self.act(self.conv1(x))
        x = self.act(self.conv2(x))
        _, ch, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(t, ch * f)
        return self.linear(x)

    def encode_wave(self, wave: MultichannelWave, window_ms: float = 25.0, hop_ms: float = 10.0) -> torch.Tensor:
        mel = log_mel(stft(wave, window_ms, hop_ms), self.n_mels)
        p = next(self.parameters())
        return self(torch.as_tensor(mel.values, dtype=p.dtype, device=p.device))


class _DecoderLayer(nn.Module):
    """Pre-norm decoder layer: causal self-attention, cross-attention, feedforward."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.SiLU(), nn.Linear(ff_dim, dim))
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        n = x.shape[0]
        mask = torch.triu(torch.ones(n, n, dtype=torch.bool, device=x.device), diagonal=1)
        h = self.norm1(x)[None]
        x = x + self.self_attn(h, h, h, attn_mask=mask, need_weights=False)[0][0]
        h = self.norm2(x)[None]
        x = x + self.cross_attn(h, memory[None], memory[None], need_weights=False)[0][0]
        return x + self.ff(self.norm3(x))


class SpeakerDecoder(nn.Module):
    """Two-layer attention decoder producing speaker queries.

    The embedded token prefix runs through causal self-attention; layer 1
    cross-attends the encoded speech, layer 2 the frame-level speaker
    embeddings. A final linear maps D to the profile dimension E.
    """

    def __init__(self, vocab_size: int, dim: int, heads: int, ff_dim: int,
                 profile_dim: int, layers: int = 2):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, dim)
        self.layers = nn.ModuleList(_DecoderLayer(dim, heads, ff_dim) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        self.to_query = nn.Linear(dim, profile_dim)

    def _memories(self, h_asr, h_spk):
        mems = [h_asr, h_spk]
        if len(self.layers) > 2:
            mems += [h_spk] * (len(self.layers) - 2)
        return mems[: len(self.layers)]

    def forward_all(self, input_ids: torch.Tensor, h_asr: torch.Tensor, h_spk: torch.Tensor) -> torch.Tensor:
        """Queries for every position of a teacher-forced sequence, (N, E)."""
        if h_asr.shape[0] == 0:
            raise ValueError("empty encoder output")
        from .encoder import sinusoidal_positions

        x = self.embed(input_ids)
        x = x + sinusoidal_positions(x.shape[0], x.shape[1], dtype=x.dtype).to(x.device)
        for layer, memory in zip(self.layers, self._memories(h_asr, h_spk)):
            x = layer(x, memory)
        return self.to_query(self.norm(x))

    def forward(self, prev_ids: torch.Tensor, h_asr: torch.Tensor, h_spk: torch.Tensor) -> torch.Tensor:
        """Query vector (E,) for the next output position given the prefix."""
        return self.forward_all(prev_ids, h_asr, h_spk)[-1]


def embed_utterance(wave: MultichannelWave, dim: int = 192, n_mels: int = 80, seed: int = 0) -> np.ndarray:
    """Deterministic utterance-level embedding stub for enrollment data.

    Mean and standard deviation of channel-averaged log-Mel frames are
    projected by a fixed seeded random matrix and L2-normalized. Stands in
    for an external speaker-verification model.
    """
    mel = log_mel(stft(wave), n_mels).values.mean(axis=0)
    stats = np.concatenate([mel.mean(axis=0), mel.std(axis=0)])
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((dim, stats.shape[0])) / np.sqrt(stats.shape[0])
    vec = proj @ stats
    return vec / np.linalg.norm(vec)


def stable_speaker_seed(speaker_id: str) -> int:
    """Process-independent integer seed derived from a speaker id."""
    digest = hashlib.sha256(speaker_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")
