import numpy as np
import pytest

from meetasr.sot import (SC_TOKEN, SOTTranscript, Utterance, deserialize,
                         load_transcript, save_transcript, serialize_fifo,
                         speaker_count, split_segments, transcript_from_json,
                         transcript_to_json)


def utt(speaker, start, words, dur=1.0):
    return Utterance(speaker_id=speaker, start_s=start, end_s=start + dur, words=words)


class TestSerializeFifo:
    def test_two_speaker_example(self):
        transcript = serialize_fifo([
            utt("A", 0.0, ["hello", "world"]),
            utt("B", 1.2, ["hi"]),
        ])
        assert transcript.tokens == ["hello", "world", SC_TOKEN, "hi"]
        assert transcript.token_speakers == ["A", "A", "A", "B"]

    def test_single_speaker_no_separator(self):
        transcript = serialize_fifo([utt("A", 0.0, ["solo", "talk"])])
        assert SC_TOKEN not in transcript.tokens
        assert transcript.n_speakers == 1

    def test_shuffled_input_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            n_speakers = int(rng.integers(1, 4))
            utterances = []
            starts = sorted(rng.uniform(0, 50, size=n_speakers))
            for i, start in enumerate(starts):
                words = [f"w{i}_{j}" for j in range(int(rng.integers(1, 4)))]
                utterances.append(utt(f"spk{i}", float(start), words))
            shuffled = list(utterances)
            rng.shuffle(shuffled)
            transcript = serialize_fifo(shuffled)

            # brute-force oracle: sort by start, concatenate with separators
            expected = []
            for i, u in enumerate(sorted(utterances, key=lambda u: u.start_s)):
                if i:
                    expected.append(SC_TOKEN)
                expected.extend(u.words)
            assert transcript.tokens == expected

    def test_multiple_utterances_per_speaker_time_ordered(self):
        transcript = serialize_fifo([
            utt("A", 5.0, ["later"]),
            utt("A", 0.0, ["first"]),
            utt("B", 2.0, ["other"]),
        ])
        assert transcript.tokens == ["first", "later", SC_TOKEN, "other"]
        assert transcript.token_speakers == ["A", "A", "A", "B"]

    def test_separator_carries_preceding_speaker(self):
        transcript = serialize_fifo([utt("A", 0.0, ["x"]), utt("B", 1.0, ["y"])])
        sep = transcript.tokens.index(SC_TOKEN)
        assert transcript.token_speakers[sep] == "A"

    def test_tied_starts_rejected(self):
        with pytest.raises(ValueError):
            serialize_fifo([utt("A", 1.0, ["x"]), utt("B", 1.0, ["y"])])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            serialize_fifo([])

    def test_fifo_order_property(self):
        rng = np.random.default_rng(1)
        for trial in range(50):
            n = int(rng.integers(1, 4))
            starts = np.sort(rng.uniform(0, 20, size=n))
            utterances = [utt(f"s{i}", float(starts[i]) + 0.001 * i, [f"w{i}"])
                          for i in range(n)]
            rng.shuffle(utterances)
            transcript = serialize_fifo(utterances)
            first_starts = {u.speaker_id: u.start_s for u in utterances}
            seen = []
            for spk in transcript.token_speakers:
                if spk not in seen:
                    seen.append(spk)
            assert seen == sorted(seen, key=first_starts.get)


class TestDeserialize:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for trial in range(30):
            n_speakers = int(rng.integers(1, 4))
            starts = sorted(rng.uniform(0, 30, size=n_speakers))
            utterances = [utt(f"spk{i}", float(s) + 0.01 * i,
                              [f"t{trial}_{i}_{j}" for j in range(int(rng.integers(1, 5)))])
                          for i, s in enumerate(starts)]
            transcript = serialize_fifo(utterances)
            recovered = deserialize(transcript)
            assert recovered == [u.words for u in
                                 sorted(utterances, key=lambda u: u.start_s)]

    def test_no_separator_single_sentence(self):
        t = SOTTranscript(tokens=["a", "b"], token_speakers=["A", "A"])
        assert deserialize(t) == [["a", "b"]]

    def test_malformed_layouts_rejected(self):
        for tokens in ([SC_TOKEN, "w"], ["w", SC_TOKEN], ["a", SC_TOKEN, SC_TOKEN, "b"]):
            t = SOTTranscript(tokens=tokens, token_speakers=["A"] * len(tokens))
            with pytest.raises(ValueError):
                deserialize(t)

    def test_validate_checks_consecutive_speakers(self):
        t = SOTTranscript(tokens=["a", SC_TOKEN, "b"], token_speakers=["A", "A", "A"])
        with pytest.raises(ValueError):
            t.validate()


class TestSpeakerCount:
    def test_two_separators(self):
        assert speaker_count(["w1", SC_TOKEN, "w2", SC_TOKEN, "w3"]) == 3

    def test_no_separators(self):
        assert speaker_count(["w1", "w2"]) == 1

    def test_empty(self):
        assert speaker_count([]) == 0

    def test_count_matches_distinct_speakers_after_serialization(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            n = int(rng.integers(1, 4))
            starts = np.sort(rng.uniform(0, 9, size=n)) + np.arange(n) * 1e-3
            utterances = [utt(f"s{i}", float(starts[i]), ["w"]) for i in range(n)]
            transcript = serialize_fifo(utterances)
            assert speaker_count(transcript.tokens) == n


class TestJsonInterface:
    def test_round_trip(self, tmp_path):
        transcript = serialize_fifo([
            utt("A", 0.0, ["hello"]),
            utt("B", 0.7, ["there", "friend"]),
        ])
        path = tmp_path / "t.json"
        save_transcript(path, transcript)
        loaded = load_transcript(path)
        assert loaded.tokens == transcript.tokens
        assert loaded.token_speakers == transcript.token_speakers
        assert [u.speaker_id for u in loaded.utterances] == ["A", "B"]

    def test_dict_shape(self):
        transcript = SOTTranscript(tokens=["a"], token_speakers=["A"])
        obj = transcript_to_json(transcript)
        assert set(obj) == {"tokens", "speakers", "utterances"}
        back = transcript_from_json(obj)
        assert back.tokens == ["a"]

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            SOTTranscript(tokens=["a", "b"], token_speakers=["A"])

    def test_split_segments_empty(self):
        assert split_segments([]) == []
