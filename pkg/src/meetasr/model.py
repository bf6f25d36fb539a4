"""End-to-end speaker-attributed multichannel ASR model.

Wires the conv frontend, the cross-channel Conformer encoder, the speaker
encoder/decoder and the profile-conditioned ASR decoder into one trainable
module with teacher-forced loss computation and greedy serialized
decoding. Training sequences are the reference tokens plus a trailing
end-of-sequence token; separator and end tokens carry the label of the
speaker they terminate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .audio import MultichannelWave
from .decoder import AsrDecoder, JointLossReport, Vocab, sequence_losses
from .encoder import EncoderConfig, MultichannelEncoder
from .frontend import (FeatureProjection, MagPhaseConvFrontend, MelConvFrontend,
                       log_mel, mag_phase_features, stft)
from .sot import SC_TOKEN, SOTTranscript
from .speaker import SpeakerDecoder, SpeakerEncoder, SpeakerProfileMatrix


@dataclass
class ModelConfig:
    vocab_size: int
    feature_kind: str = "mel"  # "mel" | "magphase"
    channels: int = 2
    n_mels: int = 80
    n_bins: int = 201
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
    speaker_weight: float = 0.1
    include_sc_speaker_loss: bool = True
    window_ms: float = 25.0
    hop_ms: float = 10.0

    def __post_init__(self):
        if self.feature_kind not in ("mel", "magphase"):
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if not 1 <= self.channels <= 4:
            raise ValueError("channels must be in 1..4")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(dim=self.dim, heads=self.heads,
                             context_frames=self.context_frames,
                             layers=self.encoder_layers, ff_dim=self.ff_dim,
                             conv_kernel=self.conv_kernel,
                             fusion_kernel=self.fusion_kernel)


def prepare_features(wave: MultichannelWave, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Numpy feature arrays for one recording: the encoder frontend input
    plus channel-shared log-Mel for the speaker encoder."""
    spec = stft(wave, cfg.window_ms, cfg.hop_ms)
    mel = log_mel(spec, cfg.n_mels).values
    if cfg.feature_kind == "mel":
        frontend_input = mel
    else:
        if spec.n_bins != cfg.n_bins:
            raise ValueError(f"model expects {cfg.n_bins} STFT bins, "
                             f"wave yields {spec.n_bins}")
        frontend_input = mag_phase_features(spec).values
    return {"frontend": frontend_input, "speaker_mel": mel}


class SpeakerAttributedAsr(nn.Module):
    """Full pipeline model; weights are immutable during forward passes."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.feature_kind == "mel":
            self.frontend = MelConvFrontend(cfg.n_mels)
        else:
            self.frontend = MagPhaseConvFrontend(cfg.n_bins)
        self.projection = FeatureProjection(self.frontend.feature_dim, cfg.dim)
        self.encoder = MultichannelEncoder(cfg.encoder_config(), cfg.channels)
        self.speaker_encoder = SpeakerEncoder(cfg.n_mels, cfg.dim)
        self.speaker_decoder = SpeakerDecoder(cfg.vocab_size, cfg.dim, cfg.heads,
                                              cfg.ff_dim, cfg.profile_dim,
                                              cfg.speaker_decoder_layers)
        self.asr_decoder = AsrDecoder(cfg.vocab_size, cfg.dim, cfg.heads,
                                      cfg.ff_dim, cfg.profile_dim,
                                      cfg.asr_decoder_layers)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _as_tensor(self, arr) -> torch.Tensor:
        return torch.as_tensor(np.asarray(arr), dtype=self.dtype)

    def encode(self, frontend_input, speaker_mel, h_spk: torch.Tensor | None = None):
        """Encoded speech H_asr and frame-level speaker embeddings H_spk.

        `h_spk` overrides the stub with externally computed frame
        embeddings; its length must match the encoder frame rate.
        """
        x = self.frontend(self._as_tensor(frontend_input))
        enc = self.encoder(self.projection(x))
        h_asr = enc.fused
        if h_spk is None:
            h_spk = self.speaker_encoder(self._as_tensor(speaker_mel))
        else:
            h_spk = self._as_tensor(h_spk)
        if h_spk.shape[0] != h_asr.shape[0]:
            raise ValueError(
                f"speaker embedding length {h_spk.shape[0]} does not match "
                f"encoder frame count {h_asr.shape[0]}")
        return h_asr, h_spk

    def posterior_sequence(self, input_ids: torch.Tensor, h_asr: torch.Tensor,
                           h_spk: torch.Tensor, profile_matrix: torch.Tensor):
        """Teacher-forced speaker posteriors (N, K) and weighted profiles (N, E)."""
        queries = self.speaker_decoder.forward_all(input_ids, h_asr, h_spk)
        probs = torch.softmax(queries @ profile_matrix, dim=-1)
        return probs, probs @ profile_matrix.T

    def compute_loss(self, frontend_input, speaker_mel, token_ids, speaker_idx,
                     profile_matrix, sc_mask=None, h_spk=None, sos_id: int = 0):
        """Differentiable joint loss for one recording; returns (total, report)."""
        h_asr, h_spk = self.encode(frontend_input, speaker_mel, h_spk)
        token_ids = torch.as_tensor(token_ids, dtype=torch.long)
        speaker_idx = torch.as_tensor(speaker_idx, dtype=torch.long)
        s_mat = self._as_tensor(profile_matrix)
        sos = torch.tensor([sos_id], dtype=torch.long)
        input_ids = torch.cat([sos, token_ids[:-1]])
        probs, profile_seq = self.posterior_sequence(input_ids, h_asr, h_spk, s_mat)
        logits = self.asr_decoder.forward_all(input_ids, profile_seq, h_asr)
        asr, spk = sequence_losses(logits, token_ids, probs, speaker_idx,
                                   sc_mask, self.cfg.include_sc_speaker_loss)
        total = asr + self.cfg.speaker_weight * spk
        report = JointLossReport(asr_loss=float(asr.detach()),
                                 speaker_loss=float(spk.detach()),
                                 total=float(total.detach()),
                                 speaker_weight=self.cfg.speaker_weight)
        return total, report

    @torch.no_grad()
    def greedy_decode(self, frontend_input, speaker_mel,
                      profiles: SpeakerProfileMatrix, vocab: Vocab,
                      max_len: int = 64, h_spk=None) -> SOTTranscript:
        """Greedy serialized decoding: alternate speaker query, posterior,
        weighted profile and token prediction; stop at <eos> or max_len."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        if self.cfg.vocab_size != len(vocab):
            raise ValueError(f"model vocab size {self.cfg.vocab_size} != vocabulary {len(vocab)}")
        h_asr, h_spk = self.encode(frontend_input, speaker_mel, h_spk)
        s_mat = self._as_tensor(profiles.matrix)
        ids = [vocab.sos_id]
        profile_hist: list[torch.Tensor] = []
        tokens: list[str] = []
        speakers: list[str] = []
        for _ in range(max_len):
            prev = torch.tensor(ids, dtype=torch.long)
            query = self.speaker_decoder(prev, h_asr, h_spk)
            probs = torch.softmax(s_mat.T @ query, dim=-1)
            profile_hist.append(s_mat @ probs)
            logits = self.asr_decoder(prev, torch.stack(profile_hist), h_asr)
            tok = int(torch.argmax(logits))
            if tok == vocab.eos_id:
                break
            tokens.append(vocab.id_to_token[tok])
            speakers.append(profiles.speaker_ids[int(torch.argmax(probs))])
            ids.append(tok)
        return SOTTranscript(tokens=tokens, token_speakers=speakers)


def training_targets(transcript: SOTTranscript, vocab: Vocab,
                     profiles: SpeakerProfileMatrix):
    """(token_ids, speaker_idx, sc_mask) arrays with the trailing <eos>.

    The <eos> position inherits the last speaker's label, like separators.
    """
    speakers = list(transcript.token_speakers)
    speakers.append(speakers[-1] if speakers else profiles.speaker_ids[0])
    token_ids = np.array(vocab.encode(transcript.tokens) + [vocab.eos_id], dtype=np.int64)
    speaker_idx = np.array([profiles.index_of(s) for s in speakers], dtype=np.int64)
    sc_mask = np.array([t == SC_TOKEN for t in transcript.tokens] + [False], dtype=bool)
    return token_ids, speaker_idx, sc_mask


def build_model(cfg: ModelConfig, seed: int = 0) -> SpeakerAttributedAsr:
    """Deterministically initialized model."""
    torch.manual_seed(seed)
    return SpeakerAttributedAsr(cfg)


def model_state_arrays(model: SpeakerAttributedAsr) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}


def save_model(path, model: SpeakerAttributedAsr) -> None:
    from .serialization import save_checkpoint

    save_checkpoint(path, model_state_arrays(model), asdict(model.cfg))


def load_model(path) -> SpeakerAttributedAsr:
    from .serialization import load_checkpoint

    arrays, cfg_dict = load_checkpoint(path)
    model = SpeakerAttributedAsr(ModelConfig(**cfg_dict))
    state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model
