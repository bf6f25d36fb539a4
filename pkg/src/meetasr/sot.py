"""Serialized multi-speaker transcripts.

All speakers' sentences are concatenated into one token stream in order
of first speech onset (FIFO), with a speaker-change separator between
consecutive speakers. Every token, including the separator, carries a
speaker label; separators take the label of the sentence they terminate.

Pure functions throughout; fully concurrent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

SC_TOKEN = "<sc>"


@dataclass
class Utterance:
    speaker_id: str
    start_s: float
    end_s: float
    words: list[str]

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise ValueError("utterance must have end_s > start_s")
        if not self.words:
            raise ValueError("utterance must contain at least one word")


@dataclass
class SOTTranscript:
    """Serialized token stream with one speaker label per token.

    `validate()` enforces reference-transcript structure; hypothesis
    transcripts from a decoder may be malformed and are kept as-is for
    scoring.
    """

    tokens: list[str]
    token_speakers: list[str]
    utterances: list[Utterance] = field(default_factory=list)

    def __post_init__(self):
        if len(self.tokens) != len(self.token_speakers):
            raise ValueError("tokens and token_speakers must have equal length")

    def validate(self) -> "SOTTranscript":
        segments = split_segments(self.tokens)
        speakers = []
        pos = 0
        for seg in segments:
            if not seg:
                raise ValueError("empty segment between separators")
            speakers.append(self.token_speakers[pos])
            pos += len(seg) + 1
        for a, b in zip(speakers, speakers[1:]):
            if a == b:
                raise ValueError("consecutive segments must have distinct speakers")
        return self

    @property
    def n_speakers(self) -> int:
        return speaker_count(self.tokens)


def split_segments(tokens: list[str]) -> list[list[str]]:
    """Split a token stream on the separator; raises on malformed layout."""
    if not tokens:
        return []
    if tokens[0] == SC_TOKEN or tokens[-1] == SC_TOKEN:
        raise ValueError("leading or trailing speaker-change separator")
    segments, current = [], []
    for tok in tokens:
        if tok == SC_TOKEN:
            if not current:
                raise ValueError("doubled speaker-change separator")
            segments.append(current)
            current = []
        else:
            current.append(tok)
    segments.append(current)
    return segments


def serialize_fifo(utterances: list[Utterance]) -> SOTTranscript:
    """Serialize utterances speaker-by-speaker in order of first start time.

    Within a speaker, utterances are concatenated in time order. A
    separator (labelled with the preceding speaker) is inserted between
    speakers. Distinct speakers must have distinct first start times.
    """
    if not utterances:
        raise ValueError("no utterances to serialize")
    first_start: dict[str, float] = {}
    by_speaker: dict[str, list[Utterance]] = {}
    for utt in utterances:
        by_speaker.setdefault(utt.speaker_id, []).append(utt)
        prev = first_start.get(utt.speaker_id)
        first_start[utt.speaker_id] = utt.start_s if prev is None else min(prev, utt.start_s)

    starts = sorted(first_start.values())
    for a, b in zip(starts, starts[1:]):
        if a == b:
            raise ValueError("tied first start times across speakers")

    order = sorted(first_start, key=first_start.get)
    tokens: list[str] = []
    speakers: list[str] = []
    for i, speaker in enumerate(order):
        if i > 0:
            tokens.append(SC_TOKEN)
            speakers.append(order[i - 1])
        for utt in sorted(by_speaker[speaker], key=lambda u: u.start_s):
            tokens.extend(utt.words)
            speakers.extend([speaker] * len(utt.words))
    return SOTTranscript(tokens=tokens, token_speakers=speakers,
                         utterances=sorted(utterances, key=lambda u: u.start_s))


def deserialize(transcript: SOTTranscript) -> list[list[str]]:
    """Per-speaker word sequences, inverse of serialize_fifo up to timing."""
    return split_segments(transcript.tokens)


def speaker_count(tokens: list[str]) -> int:
    """Number of speakers implied by separator occurrences; 0 for empty input."""
    if not tokens:
        return 0
    return sum(1 for t in tokens if t == SC_TOKEN) + 1


def transcript_to_json(transcript: SOTTranscript) -> dict:
    return {
        "tokens": list(transcript.tokens),
        "speakers": list(transcript.token_speakers),
        "utterances": [
            {"speaker": u.speaker_id, "start_s": u.start_s, "end_s": u.end_s, "words": list(u.words)}
            for u in transcript.utterances
        ],
    }


def transcript_from_json(obj: dict) -> SOTTranscript:
    utts = [
        Utterance(speaker_id=u["speaker"], start_s=u["start_s"], end_s=u["end_s"], words=list(u["words"]))
        for u in obj.get("utterances", [])
    ]
    return SOTTranscript(tokens=list(obj["tokens"]), token_speakers=list(obj["speakers"]), utterances=utts)


def save_transcript(path: str | Path, transcript: SOTTranscript) -> None:
    Path(path).write_text(json.dumps(transcript_to_json(transcript), indent=2))


def load_transcript(path: str | Path) -> SOTTranscript:
    return transcript_from_json(json.loads(Path(path).read_text()))
