"""Toy-scale training and batch decoding over simulated datasets.

Loads a simulated dataset directory (mixture WAVs, transcripts, the
enrollment list), builds the vocabulary and the enrollment profile
matrix, and runs full-batch training: each step accumulates the joint
loss over all examples and applies one optimizer update. Deterministic
under a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import read_wav
from .decoder import Vocab
from .model import (ModelConfig, SpeakerAttributedAsr, prepare_features,
                    training_targets)
from .sot import SOTTranscript, load_transcript
from .speaker import SpeakerProfileMatrix, build_profile_matrix, embed_utterance
from .metrics import score_batch


@dataclass
class TrainExample:
    stem: str
    frontend: np.ndarray
    speaker_mel: np.ndarray
    token_ids: np.ndarray
    speaker_idx: np.ndarray
    sc_mask: np.ndarray
    transcript: SOTTranscript


def load_profiles(data_dir: str | Path, profile_dim: int, n_mels: int = 80) -> SpeakerProfileMatrix:
    """Profile matrix from the dataset's enrollment list (stub embeddings)."""
    data_dir = Path(data_dir)
    index = json.loads((data_dir / "enrollment.json").read_text())
    enrollments = []
    for speaker_id, paths in index.items():
        vectors = [embed_utterance(read_wav(data_dir / p), dim=profile_dim, n_mels=n_mels)
                   for p in paths]
        enrollments.append((speaker_id, vectors))
    return build_profile_matrix(enrollments)


def dataset_stems(data_dir: str | Path) -> list[str]:
    return sorted(p.name[: -len(".manifest.json")]
                  for p in Path(data_dir).glob("*.manifest.json"))


def build_vocab(data_dir: str | Path) -> Vocab:
    tokens: list[str] = []
    for stem in dataset_stems(data_dir):
        tokens.extend(load_transcript(Path(data_dir) / f"{stem}.transcript.json").tokens)
    return Vocab(tokens)


def load_dataset(data_dir: str | Path, cfg: ModelConfig, vocab: Vocab,
                 profiles: SpeakerProfileMatrix) -> list[TrainExample]:
    data_dir = Path(data_dir)
    examples = []
    for stem in dataset_stems(data_dir):
        wave = read_wav(data_dir / f"{stem}.wav")
        if wave.n_channels < cfg.channels:
            raise ValueError(f"{stem}: {wave.n_channels} channels < model's {cfg.channels}")
        wave.samples = wave.samples[: cfg.channels]
        transcript = load_transcript(data_dir / f"{stem}.transcript.json")
        feats = prepare_features(wave, cfg)
        token_ids, speaker_idx, sc_mask = training_targets(transcript, vocab, profiles)
        examples.append(TrainExample(stem=stem, frontend=feats["frontend"],
                                     speaker_mel=feats["speaker_mel"],
                                     token_ids=token_ids, speaker_idx=speaker_idx,
                                     sc_mask=sc_mask, transcript=transcript))
    if not examples:
        raise ValueError(f"no mixtures found under {data_dir}")
    return examples


def _batch_loss(model: SpeakerAttributedAsr, examples: list[TrainExample],
                profile_matrix: np.ndarray, sos_id: int) -> torch.Tensor:
    total = None
    for ex in examples:
        loss, _ = model.compute_loss(ex.frontend, ex.speaker_mel, ex.token_ids,
                                     ex.speaker_idx, profile_matrix,
                                     torch.as_tensor(ex.sc_mask), sos_id=sos_id)
        total = loss if total is None else total + loss
    return total / len(examples)


def train_toy(model: SpeakerAttributedAsr, examples: list[TrainExample],
              profiles: SpeakerProfileMatrix, vocab: Vocab, steps: int,
              learning_rate: float, optimizer: str = "sgd",
              stop_loss: float | None = None) -> list[float]:
    """Full-batch training; returns the per-step loss curve.

    stop_loss ends training early once the batch loss falls below it.
    """
    if optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=learning_rate)
    elif optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = _batch_loss(model, examples, profiles.matrix, vocab.sos_id)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        if stop_loss is not None and losses[-1] < stop_loss:
            break
    return losses


def decode_dataset(model: SpeakerAttributedAsr, examples: list[TrainExample],
                   profiles: SpeakerProfileMatrix, vocab: Vocab,
                   max_len: int = 64) -> list[SOTTranscript]:
    model.eval()
    return [model.greedy_decode(ex.frontend, ex.speaker_mel, profiles, vocab, max_len)
            for ex in examples]


def training_wer_tser(model: SpeakerAttributedAsr, examples: list[TrainExample],
                      profiles: SpeakerProfileMatrix, vocab: Vocab,
                      max_len: int = 64) -> tuple[float, float]:
    hyps = decode_dataset(model, examples, profiles, vocab, max_len)
    report = score_batch([ex.transcript for ex in examples], hyps)
    return report.wer, report.t_ser
