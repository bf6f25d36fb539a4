"""Meeting segmentation into utterance groups.

Raw chunk/hop windows are adjusted so that no boundary falls inside a
region where two or more speakers are simultaneously active (boundaries
move two seconds outside the region, starts earlier and ends later) nor
inside a word (boundaries snap to the word edge in the same direction).
Adjustments iterate to a fixed point with a small cap. Groups keep the
words fully contained in the adjusted window; empty and duplicate groups
are dropped.

Pure per meeting; meetings can be processed in parallel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

_ADJUST_ITERATIONS = 10


@dataclass
class WordAnnotation:
    word: str
    speaker_id: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.end_s <= self.start_s:
            raise ValueError("word must have end_s > start_s")


@dataclass
class SegmentationConfig:
    chunk_s: float
    hop_s: float
    overlap_margin_s: float = 2.0

    def __post_init__(self):
        if self.chunk_s <= 0 or self.hop_s <= 0 or self.overlap_margin_s <= 0:
            raise ValueError("segmentation parameters must be positive")
        if self.hop_s > self.chunk_s:
            raise ValueError("hop_s must not exceed chunk_s")


@dataclass
class UtteranceGroup:
    start_s: float
    end_s: float
    words: list[WordAnnotation]
    n_speakers: int


def find_overlap_regions(words: list[WordAnnotation]) -> list[tuple[float, float]]:
    """Maximal intervals where at least two distinct speakers are active.

    Word intervals are treated as half-open, so touching words of
    different speakers do not overlap.
    """
    events = []
    for w in words:
        events.append((w.start_s, 1, w.speaker_id))
        events.append((w.end_s, 0, w.speaker_id))  # ends sort before starts at ties
    events.sort(key=lambda e: (e[0], e[1]))

    active: dict[str, int] = {}
    regions = []
    region_start = None
    for time, kind, speaker in events:
        if kind == 1:
            active[speaker] = active.get(speaker, 0) + 1
        else:
            active[speaker] -= 1
            if active[speaker] == 0:
                del active[speaker]
        n_active = len(active)
        if region_start is None and n_active >= 2:
            region_start = time
        elif region_start is not None and n_active < 2:
            regions.append((region_start, time))
            region_start = None
    return regions


def _adjust_boundary(t: float, is_start: bool, words: list[WordAnnotation],
                     regions: list[tuple[float, float]], margin: float) -> float:
    """Move a boundary out of overlap regions and word interiors.

    Starts only move earlier and ends only move later, so iteration
    terminates; overlap adjustment takes precedence over word snapping.
    """
    for _ in range(_ADJUST_ITERATIONS):
        region = next(((s, e) for s, e in regions if s < t < e), None)
        if region is not None:
            t = region[0] - margin if is_start else region[1] + margin
            continue
        word = next((w for w in words if w.start_s < t < w.end_s), None)
        if word is not None:
            t = word.start_s if is_start else word.end_s
            continue
        break
    return t


def segment_meeting(words: list[WordAnnotation],
                    cfg: SegmentationConfig) -> list[UtteranceGroup]:
    """Chunk/hop windowing with overlap- and word-boundary adjustment."""
    if not words:
        raise ValueError("no word annotations to segment")
    words = sorted(words, key=lambda w: (w.start_s, w.end_s))
    regions = find_overlap_regions(words)
    meeting_start = min(w.start_s for w in words)
    meeting_end = max(w.end_s for w in words)

    groups: list[UtteranceGroup] = []
    seen: set[tuple[int, ...]] = set()
    # Absolute k*hop grid; windows ending before the first word are provably
    # empty and skipped.
    k = max(0, int((meeting_start - cfg.chunk_s) // cfg.hop_s))
    while k * cfg.hop_s < meeting_end:
        raw_start = k * cfg.hop_s
        raw_end = raw_start + cfg.chunk_s
        k += 1
        start = _adjust_boundary(raw_start, True, words, regions, cfg.overlap_margin_s)
        end = _adjust_boundary(raw_end, False, words, regions, cfg.overlap_margin_s)
        members = [i for i, w in enumerate(words)
                   if w.start_s >= start - 1e-12 and w.end_s <= end + 1e-12]
        if not members:
            continue
        key = tuple(members)
        if key in seen:
            continue
        seen.add(key)
        group_words = [words[i] for i in members]
        groups.append(UtteranceGroup(
            start_s=start, end_s=end, words=group_words,
            n_speakers=len({w.speaker_id for w in group_words})))
    return groups


def dataset_stats(groups: list[UtteranceGroup]) -> dict:
    """Per speaker-count bucket: segment count, average and total duration,
    word count; plus the same figures over all segments."""
    buckets: dict[int, dict] = {}
    for g in groups:
        b = buckets.setdefault(g.n_speakers, {"n_segments": 0, "dur_s": 0.0, "n_words": 0})
        b["n_segments"] += 1
        b["dur_s"] += g.end_s - g.start_s
        b["n_words"] += len(g.words)

    def summarize(b: dict) -> dict:
        return {
            "n_segments": b["n_segments"],
            "avg_dur_s": b["dur_s"] / b["n_segments"] if b["n_segments"] else 0.0,
            "total_dur_h": b["dur_s"] / 3600.0,
            "n_words": b["n_words"],
        }

    total = {"n_segments": 0, "dur_s": 0.0, "n_words": 0}
    for b in buckets.values():
        for key in total:
            total[key] += b[key]
    return {
        "by_speaker_count": {n: summarize(b) for n, b in sorted(buckets.items())},
        "total": summarize(total),
    }


def format_stats_table(stats: dict) -> str:
    """Aligned text table: one column per speaker count plus a total column."""
    counts = list(stats["by_speaker_count"].keys())
    columns = [str(c) for c in counts] + ["total"]
    rows = [
        ("# segments", "n_segments", "{:d}"),
        ("Avg. dur. (s)", "avg_dur_s", "{:.2f}"),
        ("Total dur. (h)", "total_dur_h", "{:.3f}"),
        ("# words", "n_words", "{:d}"),
    ]
    cells = {c: stats["by_speaker_count"][int(c)] for c in columns[:-1]}
    cells["total"] = stats["total"]
    rendered = {c: [fmt.format(cells[c][key]) for _, key, fmt in rows] for c in columns}
    width = max(len(s) for col in rendered.values() for s in col)
    width = max(width, max(len(c) for c in columns)) + 2
    header = "# speakers".ljust(16) + "".join(c.rjust(width) for c in columns)
    lines = [header]
    for i, (label, _, _) in enumerate(rows):
        line = label.ljust(16) + "".join(rendered[c][i].rjust(width) for c in columns)
        lines.append(line)
    return "\n".join(lines)


def read_word_annotations(path: str | Path) -> list[WordAnnotation]:
    """Read JSON-lines word annotations {word, speaker, start_s, end_s}."""
    words = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        words.append(WordAnnotation(word=obj["word"], speaker_id=obj["speaker"],
                                    start_s=obj["start_s"], end_s=obj["end_s"]))
    return words


def groups_to_json(groups: list[UtteranceGroup]) -> list[dict]:
    return [
        {
            "start_s": g.start_s,
            "end_s": g.end_s,
            "n_speakers": g.n_speakers,
            "words": [{"word": w.word, "speaker": w.speaker_id,
                       "start_s": w.start_s, "end_s": w.end_s} for w in g.words],
        }
        for g in groups
    ]
