import math

import numpy as np
import pytest
import torch

from meetasr.decoder import (DEFAULT_SPEAKER_WEIGHT, AsrDecoder, Vocab,
                             joint_loss, sequence_losses)
from meetasr.gradcheck import finite_difference_check
from meetasr.sot import SOTTranscript
from meetasr.speaker import SpeakerProfileMatrix


def unit_columns(e, k, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((e, k))
    return m / np.linalg.norm(m, axis=0)


class TestVocab:
    def test_specials_reserved(self):
        vocab = Vocab(["hello", "world", "<sc>"])
        assert vocab.sos_id == 0
        assert vocab.eos_id == 1
        assert vocab.sc_id == 2
        assert len(vocab) == 5

    def test_round_trip(self):
        vocab = Vocab(["b", "a", "b"])
        ids = vocab.encode(["a", "b", "<sc>"])
        assert vocab.decode(ids) == ["a", "b", "<sc>"]
        again = Vocab.from_json(vocab.to_json())
        assert again.token_to_id == vocab.token_to_id


class TestAsrDecoder:
    def make(self, layers=1):
        torch.manual_seed(0)
        return AsrDecoder(vocab_size=7, dim=8, heads=2, ff_dim=12, profile_dim=5,
                          layers=layers).double()

    def test_single_layer_by_default(self):
        assert len(self.make().layers) == 1

    def test_zero_profile_projection_ablates_conditioning(self):
        dec = self.make()
        with torch.no_grad():
            dec.profile_proj.weight.zero_()
            dec.profile_proj.bias.zero_()
        g = torch.Generator().manual_seed(1)
        h_asr = torch.randn(4, 8, generator=g, dtype=torch.float64)
        prev = torch.tensor([0, 3])
        p1 = torch.randn(2, 5, generator=g, dtype=torch.float64)
        p2 = torch.randn(2, 5, generator=g, dtype=torch.float64)
        assert torch.equal(dec(prev, p1, h_asr), dec(prev, p2, h_asr))

    def test_single_profile_vector_applies_to_current_position(self):
        dec = self.make()
        g = torch.Generator().manual_seed(2)
        h_asr = torch.randn(4, 8, generator=g, dtype=torch.float64)
        prev = torch.tensor([0, 3, 2])
        profile = torch.randn(5, generator=g, dtype=torch.float64)
        expanded = torch.zeros(3, 5, dtype=torch.float64)
        expanded[-1] = profile
        assert torch.equal(dec(prev, profile, h_asr), dec(prev, expanded, h_asr))

    def test_deterministic(self):
        dec = self.make()
        g = torch.Generator().manual_seed(3)
        h_asr = torch.randn(4, 8, generator=g, dtype=torch.float64)
        prev = torch.tensor([0, 1])
        profiles = torch.randn(2, 5, generator=g, dtype=torch.float64)
        assert torch.equal(dec(prev, profiles, h_asr), dec(prev, profiles, h_asr))

    def test_rejects_empty_encoder_output(self):
        dec = self.make()
        with pytest.raises(ValueError):
            dec(torch.tensor([0]), torch.zeros(1, 5, dtype=torch.float64),
                torch.zeros(0, 8, dtype=torch.float64))

    def test_gradients_incl_profile_projection(self):
        dec = self.make()
        g = torch.Generator().manual_seed(4)
        h_asr = torch.randn(4, 8, generator=g, dtype=torch.float64)
        prev = torch.tensor([0, 3])
        profiles = torch.randn(2, 5, generator=g, dtype=torch.float64)
        target = torch.randn(7, generator=g, dtype=torch.float64)

        def loss_fn():
            return ((dec(prev, profiles, h_asr) - target) ** 2).sum()

        result = finite_difference_check(loss_fn, dec.named_parameters(),
                                         samples_per_param=3)
        assert result.max_rel_err < 1e-4, result
        checked = dict(dec.named_parameters())
        assert "profile_proj.weight" in checked


class TestJointLoss:
    profiles = SpeakerProfileMatrix(matrix=unit_columns(6, 4, seed=5),
                                    speaker_ids=["s0", "s1", "s2", "s3"])
    vocab = Vocab(["aa", "bb", "cc"])
    ref = SOTTranscript(tokens=["aa", "bb", "<sc>", "cc"],
                        token_speakers=["s0", "s0", "s0", "s2"])

    def perfect_predictions(self):
        n = len(self.ref.tokens)
        logits = np.zeros((n, len(self.vocab)))
        for i, tok in enumerate(self.ref.tokens):
            logits[i, self.vocab.token_to_id[tok]] = 1000.0
        probs = np.zeros((n, 4))
        for i, spk in enumerate(self.ref.token_speakers):
            probs[i, self.profiles.index_of(spk)] = 1.0
        return logits, probs

    def test_perfect_predictions_zero_loss(self):
        logits, probs = self.perfect_predictions()
        report = joint_loss(logits, probs, self.ref, self.vocab, self.profiles)
        assert report.asr_loss == 0.0
        assert report.speaker_loss == 0.0
        assert report.total == 0.0

    def test_default_speaker_weight(self):
        assert DEFAULT_SPEAKER_WEIGHT == 0.1
        logits, probs = self.perfect_predictions()
        report = joint_loss(logits, probs, self.ref, self.vocab, self.profiles)
        assert report.speaker_weight == 0.1

    def test_uniform_logits_give_log_vocab(self):
        n = len(self.ref.tokens)
        logits = np.zeros((n, len(self.vocab)))
        _, probs = self.perfect_predictions()
        report = joint_loss(logits, probs, self.ref, self.vocab, self.profiles)
        assert report.asr_loss == pytest.approx(math.log(len(self.vocab)), abs=1e-12)

    def test_total_invariant(self):
        rng = np.random.default_rng(6)
        logits = rng.standard_normal((4, len(self.vocab)))
        probs = rng.dirichlet(np.ones(4), size=4)
        report = joint_loss(logits, probs, self.ref, self.vocab, self.profiles,
                            speaker_weight=0.3)
        assert report.total == pytest.approx(
            report.asr_loss + 0.3 * report.speaker_loss, abs=1e-12)
        assert report.asr_loss >= 0 and report.speaker_loss >= 0

    def test_length_mismatch_rejected(self):
        logits, probs = self.perfect_predictions()
        with pytest.raises(ValueError):
            joint_loss(logits[:-1], probs, self.ref, self.vocab, self.profiles)

    def test_separator_positions_can_be_excluded(self):
        logits, probs = self.perfect_predictions()
        # corrupt the speaker prediction at the separator position only
        probs[2] = np.array([0.0, 1.0, 0.0, 0.0])
        with_sc = joint_loss(logits, probs, self.ref, self.vocab, self.profiles,
                             include_sc=True)
        without_sc = joint_loss(logits, probs, self.ref, self.vocab, self.profiles,
                                include_sc=False)
        assert with_sc.speaker_loss > without_sc.speaker_loss
        assert without_sc.speaker_loss == 0.0


class TestSequenceLosses:
    def test_masked_speaker_positions(self):
        logits = torch.zeros(3, 4, dtype=torch.float64)
        probs = torch.full((3, 2), 0.5, dtype=torch.float64)
        ids = torch.tensor([0, 1, 2])
        targets = torch.tensor([0, 1, 0])
        sc_mask = torch.tensor([False, True, False])
        asr, spk = sequence_losses(logits, ids, probs, targets, sc_mask, include_sc=False)
        assert float(asr) == pytest.approx(math.log(4))
        assert float(spk) == pytest.approx(math.log(2))

    def test_length_check(self):
        with pytest.raises(ValueError):
            sequence_losses(torch.zeros(2, 3), torch.tensor([0, 1, 2]),
                            torch.full((3, 2), 0.5), torch.tensor([0, 0, 0]))
