"""Speaker-conditioned ASR decoder and the joint training objective.

A single-layer Transformer decoder predicts the next token of the
serialized transcript. At every position the posterior-weighted speaker
profile for that position is projected from E to D and added to the token
embedding before self-attention; cross-attention runs over the encoded
speech. The objective is mean token cross-entropy plus a weighted mean
cross-entropy of the speaker posteriors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .encoder import sinusoidal_positions
from .sot import SC_TOKEN, SOTTranscript
from .speaker import SpeakerProfileMatrix

DEFAULT_SPEAKER_WEIGHT = 0.1


class Vocab:
    """Token <-> id map with reserved <sos>, <eos> and separator ids."""

    SOS = "<sos>"
    EOS = "<eos>"

    def __init__(self, tokens: list[str]):
        specials = [self.SOS, self.EOS, SC_TOKEN]
        words = [t for t in tokens if t not in specials]
        self.id_to_token = specials + sorted(set(words))
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def sos_id(self) -> int:
        return self.token_to_id[self.SOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[self.EOS]

    @property
    def sc_id(self) -> int:
        return self.token_to_id[SC_TOKEN]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id[t] for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": self.id_to_token}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        v = cls([])
        v.id_to_token = list(obj["tokens"])
        v.token_to_id = {t: i for i, t in enumerate(v.id_to_token)}
        return v


class AsrDecoder(nn.Module):
    """Transformer decoder conditioned on per-position speaker profiles."""

    def __init__(self, vocab_size: int, dim: int, heads: int, ff_dim: int,
                 profile_dim: int, layers: int = 1):
        super().__init__()
        from .speaker import _DecoderLayer

        self.embed = nn.Embedding(vocab_size, dim)
        self.profile_proj = nn.Linear(profile_dim, dim)
        self.layers = nn.ModuleList(_DecoderLayer(dim, heads, ff_dim) for _ in range(layers))
        self.norm = nn.LayerNorm(dim)
        self.to_logits = nn.Linear(dim, vocab_size)

    def forward_all(self, input_ids: torch.Tensor, profiles: torch.Tensor,
                    h_asr: torch.Tensor) -> torch.Tensor:
        """Logits for every position of a teacher-forced sequence, (N, V).

        `profiles` holds one E-vector per position (N, E); a single (E,)
        vector is applied to the last (current) position with zeros before
        it.
        """
        if h_asr.shape[0] == 0:
            raise ValueError("empty encoder output")
        n = input_ids.shape[0]
        if profiles.dim() == 1:
            expanded = profiles.new_zeros(n, profiles.shape[0])
            expanded[-1] = profiles
            profiles = expanded
        if profiles.shape[0] != n:
            raise ValueError("need one profile per input position")
        x = self.embed(input_ids) + self.profile_proj(profiles)
        x = x + sinusoidal_positions(n, x.shape[1], dtype=x.dtype).to(x.device)
        for layer in self.layers:
            x = layer(x, h_asr)
        return self.to_logits(self.norm(x))

    def forward(self, prev_ids: torch.Tensor, profiles: torch.Tensor,
                h_asr: torch.Tensor) -> torch.Tensor:
        """Logits (V,) for the next token after the given prefix."""
        return self.forward_all(prev_ids, profiles, h_asr)[-1]


@dataclass
class JointLossReport:
    asr_loss: float
    speaker_loss: float
    total: float
    speaker_weight: float


def sequence_losses(token_logits: torch.Tensor, token_ids: torch.Tensor,
                    speaker_probs: torch.Tensor, speaker_targets: torch.Tensor,
                    sc_mask: torch.Tensor | None = None,
                    include_sc: bool = True) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean token cross-entropy and mean speaker posterior cross-entropy.

    `sc_mask` marks separator positions; with include_sc=False those
    positions are dropped from the speaker term only.
    """
    if token_logits.shape[0] != token_ids.shape[0] or speaker_probs.shape[0] != token_ids.shape[0]:
        raise ValueError("sequence lengths do not match")
    asr = nn.functional.cross_entropy(token_logits, token_ids)
    log_probs = torch.log(speaker_probs)
    picked = log_probs[torch.arange(len(speaker_targets)), speaker_targets]
    if sc_mask is not None and not include_sc:
        keep = ~sc_mask
        if keep.sum() == 0:
            raise ValueError("no non-separator positions for the speaker loss")
        picked = picked[keep]
    return asr, -picked.mean()


def joint_loss(token_logits, speaker_probs, ref: SOTTranscript, vocab: Vocab,
               profiles: SpeakerProfileMatrix,
               speaker_weight: float = DEFAULT_SPEAKER_WEIGHT,
               include_sc: bool = True) -> JointLossReport:
    """Joint objective against a reference transcript.

    Sequence axes must match the reference length exactly. Accepts torch
    tensors or numpy arrays for the prediction sequences.
    """
    logits = torch.as_tensor(np.asarray(token_logits, dtype=np.float64))
    probs = torch.as_tensor(np.asarray(speaker_probs, dtype=np.float64))
    n = len(ref.tokens)
    if logits.shape[0] != n or probs.shape[0] != n:
        raise ValueError(f"prediction length does not match reference length {n}")
    token_ids = torch.tensor(vocab.encode(ref.tokens))
    speaker_targets = torch.tensor([profiles.index_of(s) for s in ref.token_speakers])
    sc_mask = torch.tensor([t == SC_TOKEN for t in ref.tokens])
    asr, spk = sequence_losses(logits, token_ids, probs, speaker_targets, sc_mask, include_sc)
    asr_f, spk_f = float(asr), float(spk)
    return JointLossReport(asr_loss=asr_f, speaker_loss=spk_f,
                           total=asr_f + speaker_weight * spk_f,
                           speaker_weight=speaker_weight)
