"""Multichannel multi-speaker mixture simulation.

Rooms, linear microphone arrays and source positions are sampled under
geometric constraints (shoebox rooms 3-8 m by 3-8 m, height 2.4-3 m,
array aperture 0.10 m within 0.5 m of the room center, sources at least
0.5 m from every wall, RT60 in [0.4, 1.0] s). Impulse responses come from
the image source method with windowed-sinc fractional delays; speakers
are mixed with strictly increasing onset delays so that serialized
transcripts obey the first-in first-out ordering.

RIR generation per (source, mic) pair is independent and parallelizable;
manifest generation is sequential per seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .audio import MultichannelWave, write_wav
from .sot import SOTTranscript, Utterance, serialize_fifo, save_transcript

SPEED_OF_SOUND = 343.0
DEFAULT_APERTURE = 0.10
MAX_ISM_ORDER = 40

ROOM_XY_RANGE = (3.0, 8.0)
ROOM_HEIGHT_RANGE = (2.4, 3.0)
RT60_RANGE = (0.4, 1.0)
ARRAY_HEIGHT_RANGE = (0.6, 0.8)
ARRAY_CENTER_MARGIN = 0.5
SOURCE_WALL_MARGIN = 0.5


@dataclass
class RoomSpec:
    dims: tuple[float, float, float]
    rt60_s: float
    absorption: float

    def __post_init__(self):
        l, w, h = self.dims
        if not (ROOM_XY_RANGE[0] <= l <= ROOM_XY_RANGE[1]
                and ROOM_XY_RANGE[0] <= w <= ROOM_XY_RANGE[1]
                and ROOM_HEIGHT_RANGE[0] <= h <= ROOM_HEIGHT_RANGE[1]):
            raise ValueError(f"room dims {self.dims} outside permitted ranges")
        if not RT60_RANGE[0] <= self.rt60_s <= RT60_RANGE[1]:
            raise ValueError(f"rt60 {self.rt60_s} outside {RT60_RANGE}")
        if not 0.0 < self.absorption <= 1.0:
            raise ValueError("absorption must be in (0, 1]")

    @property
    def volume(self) -> float:
        l, w, h = self.dims
        return l * w * h

    @property
    def surface_area(self) -> float:
        l, w, h = self.dims
        return 2.0 * (l * w + l * h + w * h)


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray  # (n_mics, 3)
    aperture_m: float = DEFAULT_APERTURE

    def __post_init__(self):
        self.mic_positions = np.asarray(self.mic_positions, dtype=np.float64)
        n = self.mic_positions.shape[0]
        if not 2 <= n <= 4:
            raise ValueError("array must have 2 to 4 microphones")
        dists = np.linalg.norm(self.mic_positions[:, None] - self.mic_positions[None], axis=-1)
        if abs(dists.max() - self.aperture_m) > 1e-9:
            raise ValueError("max pairwise mic distance must equal the aperture")
        span = self.mic_positions - self.mic_positions[0]
        if n > 2 and np.linalg.matrix_rank(span, tol=1e-9) > 1:
            raise ValueError("microphones must be collinear")
        heights = self.mic_positions[:, 2]
        if np.any(heights < ARRAY_HEIGHT_RANGE[0] - 1e-9) or np.any(heights > ARRAY_HEIGHT_RANGE[1] + 1e-9):
            raise ValueError(f"array height outside {ARRAY_HEIGHT_RANGE}")

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)


@dataclass
class SourcePlacement:
    position: np.ndarray
    speaker_id: str

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.position.shape != (3,):
            raise ValueError("source position must be a 3-D point")


def validate_geometry(room: RoomSpec, array: ArrayGeometry,
                      sources: list[SourcePlacement]) -> None:
    """Joint room/array/source constraints beyond per-type checks."""
    l, w, h = room.dims
    cx, cy = array.center[:2]
    if math.hypot(cx - l / 2.0, cy - w / 2.0) > ARRAY_CENTER_MARGIN + 1e-9:
        raise ValueError("array center more than 0.5 m from the room center")
    for mic in array.mic_positions:
        if np.any(mic < 0) or mic[0] > l or mic[1] > w or mic[2] > h:
            raise ValueError("microphone outside the room")
    for src in sources:
        x, y, z = src.position
        lo = SOURCE_WALL_MARGIN - 1e-9
        if not (lo <= x <= l - lo and lo <= y <= w - lo and lo <= z <= h - lo):
            raise ValueError(f"source {src.speaker_id} closer than 0.5 m to a wall")


@dataclass
class MixtureManifest:
    """Declarative description of one simulated recording."""

    room: RoomSpec
    array: ArrayGeometry
    sources: list[SourcePlacement]
    utterances: list[Utterance]
    speaker_pool: list[str]
    rng_seed: int
    sample_rate: int = 16000

    def __post_init__(self):
        if not 1 <= len(self.sources) <= 3:
            raise ValueError("mixtures hold 1 to 3 speakers")
        starts = [u.start_s for u in self.utterances]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("utterance start offsets must be strictly increasing")

    @property
    def n_speakers(self) -> int:
        return len(self.sources)

    def to_json(self) -> dict:
        return {
            "room": {"dims": list(self.room.dims), "rt60_s": self.room.rt60_s,
                     "absorption": self.room.absorption},
            "array": {"mic_positions": self.array.mic_positions.tolist(),
                      "aperture_m": self.array.aperture_m},
            "sources": [{"position": s.position.tolist(), "speaker_id": s.speaker_id}
                        for s in self.sources],
            "utterances": [{"speaker": u.speaker_id, "start_s": u.start_s,
                            "end_s": u.end_s, "words": list(u.words)}
                           for u in self.utterances],
            "speaker_pool": list(self.speaker_pool),
            "rng_seed": self.rng_seed,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureManifest":
        return cls(
            room=RoomSpec(dims=tuple(obj["room"]["dims"]), rt60_s=obj["room"]["rt60_s"],
                          absorption=obj["room"]["absorption"]),
            array=ArrayGeometry(mic_positions=np.array(obj["array"]["mic_positions"]),
                                aperture_m=obj["array"]["aperture_m"]),
            sources=[SourcePlacement(position=np.array(s["position"]),
                                     speaker_id=s["speaker_id"]) for s in obj["sources"]],
            utterances=[Utterance(speaker_id=u["speaker"], start_s=u["start_s"],
                                  end_s=u["end_s"], words=list(u["words"]))
                        for u in obj["utterances"]],
            speaker_pool=list(obj["speaker_pool"]),
            rng_seed=obj["rng_seed"],
            sample_rate=obj["sample_rate"],
        )


def sample_room(rng: np.random.Generator, n_mics: int | None = None,
                n_speakers: int | None = None, speaker_ids: list[str] | None = None,
                rt60_s: float | None = None,
                ) -> tuple[RoomSpec, ArrayGeometry, list[SourcePlacement]]:
    """Sample a constraint-satisfying room, array and source layout."""
    l = rng.uniform(*ROOM_XY_RANGE)
    w = rng.uniform(*ROOM_XY_RANGE)
    h = rng.uniform(*ROOM_HEIGHT_RANGE)
    rt60 = rng.uniform(*RT60_RANGE) if rt60_s is None else rt60_s
    room = RoomSpec(dims=(l, w, h), rt60_s=rt60,
                    absorption=rt60_to_absorption(rt60, (l, w, h)))

    n_mics = int(rng.integers(2, 5)) if n_mics is None else n_mics
    theta = rng.uniform(0.0, 2.0 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta), 0.0])
    radius = ARRAY_CENTER_MARGIN * np.sqrt(rng.uniform(0.0, 1.0))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    center = np.array([l / 2.0 + radius * np.cos(phi),
                       w / 2.0 + radius * np.sin(phi),
                       rng.uniform(*ARRAY_HEIGHT_RANGE)])
    offsets = np.linspace(-DEFAULT_APERTURE / 2.0, DEFAULT_APERTURE / 2.0, n_mics)
    array = ArrayGeometry(mic_positions=center[None] + offsets[:, None] * direction[None])

    n_src = int(rng.integers(1, 4)) if n_speakers is None else n_speakers
    if speaker_ids is None:
        speaker_ids = [f"spk{i}" for i in range(n_src)]
    if len(speaker_ids) != n_src:
        raise ValueError("need one speaker id per source")
    sources = []
    for sid in speaker_ids:
        for _ in range(1000):
            pos = np.array([rng.uniform(SOURCE_WALL_MARGIN, l - SOURCE_WALL_MARGIN),
                            rng.uniform(SOURCE_WALL_MARGIN, w - SOURCE_WALL_MARGIN),
                            rng.uniform(SOURCE_WALL_MARGIN, h - SOURCE_WALL_MARGIN)])
            if np.linalg.norm(pos - array.center) > 0.2:
                break
        else:  # pragma: no cover - cannot occur for the permitted ranges
            raise AssertionError("source placement rejection sampling failed")
        sources.append(SourcePlacement(position=pos, speaker_id=sid))
    validate_geometry(room, array, sources)
    return room, array, sources


def rt60_to_absorption(rt60_s: float, dims: tuple[float, float, float]) -> float:
    """Invert Sabine's formula: alpha = 0.161 V / (rt60 * surface)."""
    if rt60_s <= 0:
        raise ValueError("rt60 must be positive")
    l, w, h = dims
    volume = l * w * h
    surface = 2.0 * (l * w + l * h + w * h)
    alpha = 0.161 * volume / (rt60_s * surface)
    if alpha > 1.0:
        raise ValueError(f"room too small for rt60 {rt60_s}: Sabine alpha {alpha:.3f} > 1")
    return alpha


def image_source_rir(room: RoomSpec, source: np.ndarray, mic: np.ndarray,
                     fs: int, max_order: int | None = None,
                     tw_samples: int = 40) -> np.ndarray:
    """Shoebox impulse response by the image source method.

    Each image contributes an impulse of amplitude beta^order / (4 pi d)
    at delay d/c with beta = sqrt(1 - alpha), placed by Hann-windowed sinc
    interpolation (cutoff at Nyquist, so integer-sample delays stay exact
    single-tap impulses). With max_order=None, images inside a sphere of
    radius c * rt60 are included, capped at reflection order 40.
    """
    source = np.asarray(source, dtype=np.float64)
    mic = np.asarray(mic, dtype=np.float64)
    dims = np.asarray(room.dims)
    if np.any(source <= 0) or np.any(source >= dims) or np.any(mic <= 0) or np.any(mic >= dims):
        raise ValueError("source and microphone must be strictly inside the room")
    direct = np.linalg.norm(source - mic)
    if direct < 1e-6:
        raise ValueError("source and microphone positions coincide")

    if max_order is None:
        radius = SPEED_OF_SOUND * room.rt60_s
        order_cap = MAX_ISM_ORDER
    else:
        order_cap = int(max_order)
        if order_cap < 0:
            raise ValueError("max_order must be >= 0")
        radius = None

    beta = math.sqrt(1.0 - room.absorption)
    half = tw_samples // 2
    tw_s = tw_samples / fs

    if radius is not None:
        r_bounds = [int(math.ceil(radius / (2.0 * d))) + 1 for d in dims]
    else:
        r_bounds = [(order_cap + 1) // 2 + 1] * 3
    axes_r = [np.arange(-b, b + 1) for b in r_bounds]

    max_dist = direct
    deposits = []
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                p = (px, py, pz)
                comps, orders = [], []
                for d in range(3):
                    r = axes_r[d]
                    comps.append(mic[d] - source[d] + 2.0 * p[d] * source[d] + 2.0 * r * dims[d])
                    orders.append(np.abs(r + p[d]) + np.abs(r))
                dist = np.sqrt(comps[0][:, None, None] ** 2
                               + comps[1][None, :, None] ** 2
                               + comps[2][None, None, :] ** 2)
                order = (orders[0][:, None, None] + orders[1][None, :, None]
                         + orders[2][None, None, :])
                mask = order <= order_cap
                if radius is not None:
                    mask &= dist <= radius
                if not mask.any():
                    continue
                d_flat = dist[mask]
                o_flat = order[mask]
                amp = beta ** o_flat / (4.0 * np.pi * d_flat)
                deposits.append((d_flat / SPEED_OF_SOUND, amp))
                max_dist = max(max_dist, float(d_flat.max()))

    npts = int(math.ceil(max_dist / SPEED_OF_SOUND * fs)) + half + 2
    rir = np.zeros(npts)
    offsets = np.arange(-half, half + 2)
    for delays, amps in deposits:
        base = np.floor(delays * fs).astype(np.int64)
        n = base[:, None] + offsets[None, :]
        t = n / fs - delays[:, None]
        s = np.where(np.abs(t) <= tw_s / 2.0,
                     0.5 * (1.0 + np.cos(2.0 * np.pi * t / tw_s)) * np.sinc(fs * t),
                     0.0)
        values = (amps[:, None] * s).ravel()
        idx = n.ravel()
        keep = (idx >= 0) & (idx < npts)
        rir += np.bincount(idx[keep], weights=values[keep], minlength=npts)
    return rir


def schroeder_curve(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay in dB, starting at 0."""
    energy = np.asarray(rir, dtype=np.float64) ** 2
    tail = np.cumsum(energy[::-1])[::-1]
    total = tail[0]
    if total <= 0:
        raise ValueError("impulse response has no energy")
    return 10.0 * np.log10(np.maximum(tail / total, 1e-300))


def estimate_rt60(rir: np.ndarray, fs: int,
                  fit_db: tuple[float, float] = (-5.0, -25.0)) -> float:
    """RT60 from a line fit to the Schroeder curve over the fit_db span."""
    edc = schroeder_curve(rir)
    hi, lo = fit_db
    start = int(np.argmax(edc <= hi))
    stop = int(np.argmax(edc <= lo))
    if stop <= start:
        raise ValueError(f"decay never reaches {lo} dB")
    t = np.arange(start, stop) / fs
    slope, _ = np.polyfit(t, edc[start:stop], 1)
    if slope >= 0:
        raise ValueError("non-decaying Schroeder curve")
    return -60.0 / slope


def mix_with_delays(sources: list[tuple[np.ndarray, SourcePlacement]],
                    manifest: MixtureManifest,
                    rirs: list[list[np.ndarray]]) -> MultichannelWave:
    """Convolve each dry signal with its per-mic RIRs, apply the utterance
    onset delays from the manifest, and sum per microphone."""
    fs = manifest.sample_rate
    starts = {u.speaker_id: u.start_s for u in manifest.utterances}
    offsets = []
    for dry, placement in sources:
        if placement.speaker_id not in starts:
            raise ValueError(f"no utterance timing for {placement.speaker_id}")
        offsets.append(int(round(starts[placement.speaker_id] * fs)))
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise ValueError("source onsets must be strictly increasing")

    n_mics = len(rirs[0])
    total = max(off + len(dry) + len(rir) - 1
                for (dry, _), off, per_mic in zip(sources, offsets, rirs)
                for rir in per_mic)
    out = np.zeros((n_mics, total))
    for k, ((dry, _), off) in enumerate(zip(sources, offsets)):
        for m in range(n_mics):
            wet = fftconvolve(dry, rirs[k][m])
            out[m, off : off + len(wet)] += wet
    return MultichannelWave(samples=out, sample_rate=fs)


# --- synthetic speech material -------------------------------------------

LEXICON = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey", "zulu",
]


def _stable_seed(text: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def word_waveform(word: str, fs: int, duration_s: float = 0.24) -> np.ndarray:
    """Deterministic pseudo-speech for one word: a few harmonics plus noise
    under a Hann envelope, identical across runs and platforms."""
    rng = np.random.default_rng(_stable_seed("word:" + word))
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    sig = np.zeros(n)
    for _ in range(3):
        f0 = rng.uniform(180.0, 1800.0)
        sig += rng.uniform(0.3, 1.0) * np.sin(2.0 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    sig += 0.1 * rng.standard_normal(n)
    envelope = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    return sig * envelope


def speaker_coloration(speaker_id: str, taps: int = 9) -> np.ndarray:
    """Per-speaker FIR coloration filter, unit energy."""
    rng = np.random.default_rng(_stable_seed("speaker:" + speaker_id))
    fir = rng.standard_normal(taps) * np.exp(-0.5 * np.arange(taps))
    fir[0] += 1.0
    return fir / np.linalg.norm(fir)


def utterance_waveform(words: list[str], speaker_id: str, fs: int,
                       word_duration_s: float = 0.24, gap_s: float = 0.03) -> np.ndarray:
    """Concatenated word waveforms colored by the speaker filter."""
    gap = np.zeros(int(gap_s * fs))
    pieces = []
    for i, word in enumerate(words):
        if i:
            pieces.append(gap)
        pieces.append(word_waveform(word, fs, word_duration_s))
    dry = np.concatenate(pieces)
    colored = fftconvolve(dry, speaker_coloration(speaker_id), mode="same")
    peak = np.abs(colored).max()
    return 0.3 * colored / peak if peak > 0 else colored


@dataclass
class SimulatedMixture:
    wave: MultichannelWave
    manifest: MixtureManifest
    transcript: SOTTranscript


def simulate_mixture(seed: int, speaker_pool: list[str],
                     n_mics: int | None = None, n_speakers: int | None = None,
                     fs: int = 16000, words_per_speaker: tuple[int, int] = (2, 5),
                     rir_max_order: int | None = None,
                     rt60_s: float | None = None) -> SimulatedMixture:
    """One complete simulated recording with manifest and FIFO transcript."""
    rng = np.random.default_rng(seed)
    n_src = int(rng.integers(1, 4)) if n_speakers is None else n_speakers
    chosen = [str(s) for s in rng.choice(speaker_pool, size=n_src, replace=False)]
    room, array, sources = sample_room(rng, n_mics=n_mics, n_speakers=n_src,
                                       speaker_ids=chosen, rt60_s=rt60_s)

    dry_signals, utterances = [], []
    start = 0.0
    prev_duration = None
    for k, src in enumerate(sources):
        n_words = int(rng.integers(words_per_speaker[0], words_per_speaker[1] + 1))
        words = [str(w) for w in rng.choice(LEXICON, size=n_words, replace=True)]
        dry = utterance_waveform(words, src.speaker_id, fs)
        duration = len(dry) / fs
        if k > 0:
            start = start + prev_duration * (1.0 - rng.random())  # offset in (0, prev]
        dry_signals.append(dry)
        utterances.append(Utterance(speaker_id=src.speaker_id, start_s=start,
                                    end_s=start + duration, words=words))
        prev_duration = duration

    manifest = MixtureManifest(room=room, array=array, sources=sources,
                               utterances=utterances, speaker_pool=list(speaker_pool),
                               rng_seed=seed, sample_rate=fs)
    rirs = [[image_source_rir(room, src.position, mic, fs, max_order=rir_max_order)
             for mic in array.mic_positions]
            for src in sources]
    wave = mix_with_delays(list(zip(dry_signals, sources)), manifest, rirs)
    transcript = serialize_fifo(utterances)
    return SimulatedMixture(wave=wave, manifest=manifest, transcript=transcript)


def enrollment_waves(speaker_id: str, fs: int = 16000, n: int = 2,
                     n_words: int = 4) -> list[np.ndarray]:
    """Deterministic enrollment sentences for one speaker."""
    out = []
    for i in range(n):
        rng = np.random.default_rng(_stable_seed(f"enroll:{speaker_id}:{i}"))
        words = [str(w) for w in rng.choice(LEXICON, size=n_words, replace=True)]
        out.append(utterance_waveform(words, speaker_id, fs))
    return out


def generate_dataset(out_dir: str | Path, n_mixtures: int, seed: int,
                     pool_size: int = 8, n_mics: int | None = None,
                     n_speakers: int | None = None, fs: int = 16000,
                     words_per_speaker: tuple[int, int] = (2, 5),
                     rir_max_order: int | None = None,
                     rt60_s: float | None = None) -> list[str]:
    """Write mixtures, manifests, transcripts and the enrollment list."""
    out_dir = Path(out_dir)
    (out_dir / "enroll").mkdir(parents=True, exist_ok=True)
    pool = [f"spk{i}" for i in range(pool_size)]

    enrollment_index = {}
    for sid in pool:
        paths = []
        for i, wave in enumerate(enrollment_waves(sid, fs)):
            path = out_dir / "enroll" / f"{sid}_{i}.wav"
            write_wav(path, MultichannelWave(samples=wave[None], sample_rate=fs))
            paths.append(str(path.relative_to(out_dir)))
        enrollment_index[sid] = paths
    (out_dir / "enrollment.json").write_text(json.dumps(enrollment_index, indent=2))

    stems = []
    for i in range(n_mixtures):
        mix = simulate_mixture(seed + i, pool, n_mics=n_mics, n_speakers=n_speakers,
                               fs=fs, words_per_speaker=words_per_speaker,
                               rir_max_order=rir_max_order, rt60_s=rt60_s)
        stem = f"mixture_{i:04d}"
        write_wav(out_dir / f"{stem}.wav", mix.wave)
        (out_dir / f"{stem}.manifest.json").write_text(
            json.dumps(mix.manifest.to_json(), indent=2))
        save_transcript(out_dir / f"{stem}.transcript.json", mix.transcript)
        stems.append(stem)
    return stems
