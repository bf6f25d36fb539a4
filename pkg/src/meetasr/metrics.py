"""Scoring: word error rate, speaker error rates, speaker counting.

WER uses minimal-edit-distance alignment with unit costs. The token-level
speaker error rate counts speaker-label mismatches over aligned pairs plus
insertions and deletions; the sentence-level rate assigns each hypothesized
sentence its majority speaker and compares sentences in serialized order.
Separator tokens are stripped before any word alignment. All functions are
pure and trivially parallel over utterances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sot import SC_TOKEN, SOTTranscript

COUNT_CLASSES = (1, 2, 3, 4)  # confusion rows; estimates above 4 pool into ">4"


@dataclass
class AlignmentResult:
    """Edit-distance alignment; ops reconstruct both sequences in order."""

    ops: list[tuple[str, int | None, int | None]]
    substitutions: int
    insertions: int
    deletions: int
    matches: int
    n_ref: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def align(ref: list[str], hyp: list[str]) -> AlignmentResult:
    """Minimal-edit alignment with deterministic tie-break
    (match > substitution > deletion > insertion)."""
    n, m = len(ref), len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dp[i, j] = min(sub, dp[i - 1, j] + 1, dp[i, j - 1] + 1)

    ops: list[tuple[str, int | None, int | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i, j] == dp[i - 1, j - 1]:
            ops.append(("match", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + 1:
            ops.append(("sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            ops.append(("del", i - 1, None))
            i -= 1
        else:
            ops.append(("ins", None, j - 1))
            j -= 1
    ops.reverse()
    counts = {"match": 0, "sub": 0, "del": 0, "ins": 0}
    for op, _, _ in ops:
        counts[op] += 1
    return AlignmentResult(ops=ops, substitutions=counts["sub"],
                           insertions=counts["ins"], deletions=counts["del"],
                           matches=counts["match"], n_ref=n)


def strip_separators(tokens: list[str]) -> list[str]:
    return [t for t in tokens if t != SC_TOKEN]


def _words_with_speakers(t: SOTTranscript) -> tuple[list[str], list[str]]:
    if len(t.tokens) != len(t.token_speakers):
        raise ValueError("per-token speaker labels required")
    pairs = [(tok, spk) for tok, spk in zip(t.tokens, t.token_speakers) if tok != SC_TOKEN]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def wer(ref: list[str], hyp: list[str]) -> float:
    """100 * (S + I + D) / N_ref over separator-stripped tokens."""
    ref_w, hyp_w = strip_separators(ref), strip_separators(hyp)
    if not ref_w:
        raise ValueError("empty reference")
    a = align(ref_w, hyp_w)
    return 100.0 * a.edits / a.n_ref


def t_ser(ref: SOTTranscript, hyp: SOTTranscript) -> float:
    """Token-level speaker error rate.

    Speaker mismatches over aligned pairs (matches and substitutions) plus
    all insertions and deletions, divided by the reference word count.
    """
    ref_w, ref_s = _words_with_speakers(ref)
    hyp_w, hyp_s = _words_with_speakers(hyp)
    if not ref_w:
        raise ValueError("empty reference")
    a = align(ref_w, hyp_w)
    errors = 0
    for op, ri, hi in a.ops:
        if op in ("match", "sub"):
            errors += ref_s[ri] != hyp_s[hi]
        else:
            errors += 1
    return 100.0 * errors / a.n_ref


def _sentences(tokens: list[str], speakers: list[str]) -> list[list[str]]:
    """Per-sentence speaker-label lists; empty segments are dropped so that
    malformed hypothesis streams still score."""
    sentences, current = [], []
    for tok, spk in zip(tokens, speakers):
        if tok == SC_TOKEN:
            if current:
                sentences.append(current)
            current = []
        else:
            current.append(spk)
    if current:
        sentences.append(current)
    return sentences


def majority_speaker(labels: list[str]) -> str:
    """Most frequent label; ties go to the earliest-appearing label."""
    counts: dict[str, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    best = max(counts.values())
    for lab in labels:
        if counts[lab] == best:
            return lab
    raise ValueError("empty sentence")


def s_ser(ref: SOTTranscript, hyp: SOTTranscript) -> float:
    """Sentence-level speaker error rate.

    Each hypothesized sentence gets its majority speaker; sentences pair
    with reference sentences in serialized order, and mismatched plus
    unmatched sentences count as errors over the reference sentence count.
    """
    ref_sent = _sentences(ref.tokens, ref.token_speakers)
    hyp_sent = _sentences(hyp.tokens, hyp.token_speakers)
    if not ref_sent:
        raise ValueError("empty reference")
    errors = sum(majority_speaker(r) != majority_speaker(h)
                 for r, h in zip(ref_sent, hyp_sent))
    errors += abs(len(ref_sent) - len(hyp_sent))
    return 100.0 * errors / len(ref_sent)


@dataclass
class CountingConfusion:
    """Speaker-count confusion: reference count rows 1..4, estimate columns
    1, 2, 3, 4, >4. Rows of `percent` sum to 100 for non-empty classes."""

    counts: np.ndarray
    totals: np.ndarray

    @property
    def percent(self) -> np.ndarray:
        out = np.zeros_like(self.counts, dtype=np.float64)
        for r, total in enumerate(self.totals):
            if total:
                out[r] = 100.0 * self.counts[r] / total
        return out

    @property
    def per_class_accuracy(self) -> dict[int, float]:
        return {c: float(self.percent[i, i]) for i, c in enumerate(COUNT_CLASSES)
                if self.totals[i]}


def speaker_counting_accuracy(ref_token_lists: list[list[str]],
                              hyp_token_lists: list[list[str]]) -> CountingConfusion:
    """Confusion of estimated vs reference speaker counts, counts from
    separator occurrences (# separators + 1)."""
    from .sot import speaker_count

    counts = np.zeros((len(COUNT_CLASSES), len(COUNT_CLASSES) + 1), dtype=np.int64)
    totals = np.zeros(len(COUNT_CLASSES), dtype=np.int64)
    for ref, hyp in zip(ref_token_lists, hyp_token_lists):
        r, h = speaker_count(ref), speaker_count(hyp)
        if r not in COUNT_CLASSES:
            continue
        row = COUNT_CLASSES.index(r)
        col = COUNT_CLASSES.index(h) if h in COUNT_CLASSES else len(COUNT_CLASSES)
        counts[row, col] += 1
        totals[row] += 1
    return CountingConfusion(counts=counts, totals=totals)


@dataclass
class ScoreReport:
    wer: float
    s_ser: float
    t_ser: float
    n_utterances: int = 0
    counting: CountingConfusion | None = None

    def to_json(self) -> dict:
        out = {"wer": self.wer, "s_ser": self.s_ser, "t_ser": self.t_ser,
               "n_utterances": self.n_utterances}
        if self.counting is not None:
            out["counting_confusion_percent"] = self.counting.percent.round(4).tolist()
            out["counting_totals"] = self.counting.totals.tolist()
        return out


def score_batch(refs: list[SOTTranscript], hyps: list[SOTTranscript]) -> ScoreReport:
    """Pooled scores over a batch: error counts accumulate before dividing,
    so the batch value is the reference-length-weighted average."""
    if len(refs) != len(hyps):
        raise ValueError("need one hypothesis per reference")
    if not refs:
        raise ValueError("empty batch")
    word_edits = word_total = 0
    tser_errors = 0
    sser_errors = sser_total = 0
    for ref, hyp in zip(refs, hyps):
        ref_w, ref_s = _words_with_speakers(ref)
        hyp_w, hyp_s = _words_with_speakers(hyp)
        a = align(ref_w, hyp_w)
        word_edits += a.edits
        word_total += a.n_ref
        for op, ri, hi in a.ops:
            if op in ("match", "sub"):
                tser_errors += ref_s[ri] != hyp_s[hi]
            else:
                tser_errors += 1
        ref_sent = _sentences(ref.tokens, ref.token_speakers)
        hyp_sent = _sentences(hyp.tokens, hyp.token_speakers)
        sser_errors += sum(majority_speaker(r) != majority_speaker(h)
                           for r, h in zip(ref_sent, hyp_sent))
        sser_errors += abs(len(ref_sent) - len(hyp_sent))
        sser_total += len(ref_sent)
    counting = speaker_counting_accuracy([r.tokens for r in refs],
                                         [h.tokens for h in hyps])
    return ScoreReport(wer=100.0 * word_edits / word_total,
                       s_ser=100.0 * sser_errors / sser_total,
                       t_ser=100.0 * tser_errors / word_total,
                       n_utterances=len(refs), counting=counting)
