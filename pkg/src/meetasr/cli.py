"""Command-line surface for the pipeline.

Subcommands: simulate, featurize, train, decode, score, segment, stats.
Every command is reproducible under a fixed seed and embeds the resolved
configuration in its outputs. Exit codes: 0 success, 2 validation error,
3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .audio import read_wav
from .config import PipelineConfig
from .decoder import Vocab
from .metrics import score_batch
from .model import ModelConfig, build_model, load_model, prepare_features, save_model
from .segment import (SegmentationConfig, dataset_stats, format_stats_table,
                      groups_to_json, read_word_annotations, segment_meeting)
from .serialization import save_feature_tensor
from .simulate import generate_dataset
from .sot import load_transcript, save_transcript, speaker_count
from .train import (build_vocab, dataset_stems, decode_dataset, load_dataset,
                    load_profiles, train_toy, training_wer_tser)


def model_config_from_pipeline(cfg: PipelineConfig, vocab_size: int) -> ModelConfig:
    n_fft = int(round(cfg.sample_rate * cfg.window_ms / 1000.0))
    return ModelConfig(
        vocab_size=vocab_size, feature_kind=cfg.feature_kind, channels=cfg.channels,
        n_mels=cfg.n_mels, n_bins=n_fft // 2 + 1, dim=cfg.dim, heads=cfg.heads,
        context_frames=cfg.context_frames, encoder_layers=cfg.encoder_layers,
        ff_dim=cfg.ff_dim, asr_decoder_layers=cfg.asr_decoder_layers,
        speaker_decoder_layers=cfg.speaker_decoder_layers, profile_dim=cfg.profile_dim,
        conv_kernel=cfg.conv_kernel, fusion_kernel=cfg.fusion_kernel,
        speaker_weight=cfg.speaker_weight,
        include_sc_speaker_loss=cfg.include_sc_speaker_loss,
        window_ms=cfg.window_ms, hop_ms=cfg.hop_ms,
    )


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for key in ("seed", "channels", "steps", "optimizer", "learning_rate"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    if getattr(args, "features", None):
        overrides["feature_kind"] = args.features
    return cfg.override(**overrides)


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_speakers = None
    if cfg.n_speakers_min == cfg.n_speakers_max:
        n_speakers = cfg.n_speakers_min
    stems = generate_dataset(
        out, args.n, cfg.seed, pool_size=cfg.n_profiles, n_mics=cfg.channels,
        n_speakers=n_speakers, fs=cfg.sample_rate,
        words_per_speaker=(cfg.words_per_speaker_min, cfg.words_per_speaker_max),
        rir_max_order=cfg.rir_max_order, rt60_s=cfg.rt60_s)
    cfg.save(out / "dataset_config.json")
    print(f"wrote {len(stems)} mixtures to {out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _resolve_config(args)
    data = Path(args.data)
    out = Path(args.out) if args.out else data / f"features_{cfg.feature_kind}"
    out.mkdir(parents=True, exist_ok=True)
    mcfg = model_config_from_pipeline(cfg, vocab_size=1)
    stems = dataset_stems(data)
    if not stems:
        raise FileNotFoundError(f"no mixtures found under {data}")
    for stem in stems:
        wave = read_wav(data / f"{stem}.wav")
        if wave.n_channels < cfg.channels:
            raise ValueError(f"{stem}: fewer channels than configured")
        wave.samples = wave.samples[: cfg.channels]
        feats = prepare_features(wave, mcfg)
        save_feature_tensor(out / f"{stem}.feat", feats["frontend"], cfg.feature_kind)
    cfg.save(out / "feature_config.json")
    print(f"featurized {len(stems)} mixtures to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    data = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(data)
    profiles = load_profiles(data, cfg.profile_dim, cfg.n_mels)
    mcfg = model_config_from_pipeline(cfg, vocab_size=len(vocab))
    model = build_model(mcfg, seed=cfg.seed)
    examples = load_dataset(data, mcfg, vocab, profiles)
    losses = train_toy(model, examples, profiles, vocab, steps=cfg.steps,
                       learning_rate=cfg.learning_rate, optimizer=cfg.optimizer,
                       stop_loss=args.stop_loss)
    save_model(out / "checkpoint.bin", model)
    (out / "vocab.json").write_text(json.dumps(vocab.to_json(), indent=2))
    cfg.save(out / "train_config.json")
    with open(out / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{loss:.10f}\n")
    wer_val, tser_val = training_wer_tser(model, examples, profiles, vocab,
                                          cfg.max_decode_len)
    summary = {"steps_run": len(losses), "first_loss": losses[0],
               "final_loss": losses[-1], "train_wer": wer_val,
               "train_t_ser": tser_val, "config": cfg.to_json()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(f"trained {len(losses)} steps: loss {losses[0]:.4f} -> {losses[-1]:.4f}, "
          f"train WER {wer_val:.2f}%, train T-SER {tser_val:.2f}%")
    return 0


def cmd_decode(args) -> int:
    cfg = _resolve_config(args)
    data = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.checkpoint)
    vocab = Vocab.from_json(json.loads(Path(args.vocab).read_text()))
    profiles = load_profiles(data, model.cfg.profile_dim, model.cfg.n_mels)
    examples = load_dataset(data, model.cfg, vocab, profiles)
    hyps = decode_dataset(model, examples, profiles, vocab, cfg.max_decode_len)
    for ex, hyp in zip(examples, hyps):
        save_transcript(out / f"{ex.stem}.hyp.json", hyp)
    print(f"decoded {len(hyps)} mixtures to {out}")
    return 0


def cmd_score(args) -> int:
    ref_dir, hyp_dir = Path(args.ref), Path(args.hyp)
    stems = sorted(p.name[: -len(".transcript.json")]
                   for p in ref_dir.glob("*.transcript.json"))
    if not stems:
        raise FileNotFoundError(f"no reference transcripts under {ref_dir}")
    refs, hyps = [], []
    for stem in stems:
        refs.append(load_transcript(ref_dir / f"{stem}.transcript.json"))
        hyp_path = hyp_dir / f"{stem}.hyp.json"
        if not hyp_path.exists():
            hyp_path = hyp_dir / f"{stem}.transcript.json"
        hyps.append(load_transcript(hyp_path))

    report = {"overall": score_batch(refs, hyps).to_json(), "n_pairs": len(stems)}
    if args.per_speaker_count:
        groups: dict[int, list[int]] = {}
        for i, ref in enumerate(refs):
            groups.setdefault(speaker_count(ref.tokens), []).append(i)
        report["by_speaker_count"] = {
            str(k): score_batch([refs[i] for i in idx], [hyps[i] for i in idx]).to_json()
            for k, idx in sorted(groups.items())
        }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_segment(args) -> int:
    words = read_word_annotations(args.words)
    cfg = SegmentationConfig(chunk_s=args.chunk_s, hop_s=args.hop_s)
    groups = segment_meeting(words, cfg)
    payload = {"config": {"chunk_s": cfg.chunk_s, "hop_s": cfg.hop_s,
                          "overlap_margin_s": cfg.overlap_margin_s},
               "groups": groups_to_json(groups)}
    Path(args.out).write_text(json.dumps(payload, indent=2))
    print(f"wrote {len(groups)} utterance groups to {args.out}")
    return 0


def cmd_stats(args) -> int:
    from .segment import UtteranceGroup, WordAnnotation

    payload = json.loads(Path(args.groups).read_text())
    groups = []
    for g in payload["groups"]:
        words = [WordAnnotation(word=w["word"], speaker_id=w["speaker"],
                                start_s=w["start_s"], end_s=w["end_s"])
                 for w in g["words"]]
        groups.append(UtteranceGroup(start_s=g["start_s"], end_s=g["end_s"],
                                     words=words, n_speakers=g["n_speakers"]))
    stats = dataset_stats(groups)
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2))
    print(format_stats_table(stats))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meetasr",
                                     description="multichannel speaker-attributed ASR pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--channels", type=int, default=None)
        p.add_argument("--features", choices=["mel", "magphase"], default=None)

    p = sub.add_parser("simulate", help="generate a simulated dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("featurize", help="extract frontend feature tensors")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="toy-scale training on a simulated dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=None)
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--stop-loss", type=float, default=None, dest="stop_loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="greedy serialized decoding")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("score", help="score hypothesis transcripts")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--per-speaker-count", action="store_true", dest="per_speaker_count")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("segment", help="segment word annotations into utterance groups")
    p.add_argument("--words", required=True, help="JSON-lines word annotations")
    p.add_argument("--chunk-s", type=float, default=5.0, dest="chunk_s")
    p.add_argument("--hop-s", type=float, default=2.0, dest="hop_s")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stats", help="statistics table for segmented groups")
    p.add_argument("--groups", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, KeyError, json.JSONDecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
