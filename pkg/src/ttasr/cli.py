"""Single `ttasr` entry point wiring the pipeline together.

Subcommands: synth-corpus, featurize, build-vocab, train, decode, score.
Every run prints its resolved configuration as a JSON line first. Exit
codes: 0 success, 1 runtime failure, 2 validation error. Any flag default
can be overridden with an environment variable named TTASR_<FLAG> in
UPPER_SNAKE (e.g. TTASR_SEED=7, TTASR_BEAM=4); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import audio_io, features, metrics
from .decoder import beam_decode, greedy_decode
from .errors import NumericError, TtasrError
from .network import ModelConfig, TransducerModel, load_checkpoint, load_parameters
from .tokenizer import Lexicon, ModelingUnit, Vocabulary, build_vocabulary
from .trainer import TrainConfig, run_phase, synthetic_corpus

_ENV_PREFIX = "TTASR_"


def _env_default(flag: str, fallback, cast=str):
    raw = os.environ.get(_ENV_PREFIX + flag.upper().replace("-", "_"))
    if raw is None:
        return fallback
    return cast(raw)


def _print_resolved(command: str, args: argparse.Namespace) -> None:
    resolved = {
        k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")
    }
    print(json.dumps({"command": command, **resolved}, ensure_ascii=False))


def _load_lexicon(arg: str | None, unit: ModelingUnit, required: bool) -> Lexicon | None:
    if not unit.needs_lexicon:
        return None
    if arg is None:
        if required:
            raise ValueError(
                f"--lexicon is required for the {unit.value} unit "
                "(pass 'builtin' for the packaged lexicon)"
            )
        return Lexicon.default()
    if arg == "builtin":
        return Lexicon.default()
    return Lexicon.from_tsv(arg)


def _cmd_synth_corpus(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = synthetic_corpus(args.n, seed=args.seed)
    for name, audio, _ in corpus:
        audio_io.write_wav(out_dir / name, audio)
    audio_io.save_manifest(out_dir / "manifest.jsonl", [u for _, _, u in corpus])
    print(f"wrote {args.n} utterances to {out_dir}")
    return 0


def _featurize_one(utt, manifest, fbank):
    audio = audio_io.read_wav(audio_io._resolve_audio_path(manifest, utt.audio_path))
    if audio.sample_rate != utt.sample_rate:
        raise ValueError(
            f"{utt.audio_path}: manifest says {utt.sample_rate} Hz, file is "
            f"{audio.sample_rate} Hz"
        )
    return features.normalize(features.compute_fbank(audio, fbank))


def _cmd_featurize(args) -> int:
    utterances = audio_io.load_manifest(args.manifest)
    fbank = features.FbankConfig(d=args.d)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            fbank = features.FbankConfig(**{**{"d": args.d}, **json.load(fh)})
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            feats = list(
                pool.map(lambda u: _featurize_one(u, args.manifest, fbank), utterances)
            )
    else:
        feats = [_featurize_one(u, args.manifest, fbank) for u in utterances]
    entries = features.write_archive(
        args.out,
        (
            (utt.audio_path, feat, utt.text, utt.dataset)
            for utt, feat in zip(utterances, feats)
        ),
    )
    print(f"wrote {len(entries)} features to {args.out}")
    return 0


def _cmd_build_vocab(args) -> int:
    unit = ModelingUnit.parse(args.unit)
    lexicon = _load_lexicon(args.lexicon, unit, required=True)
    utterances = audio_io.load_manifest(args.manifest)
    vocab = build_vocabulary((u.text for u in utterances), unit, lexicon)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return 0


def _cmd_train(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    train_raw = dict(raw.get("train", {}))
    if args.phase:
        train_raw["phase"] = args.phase
    train_cfg = TrainConfig.from_dict(train_raw)
    model_raw = dict(raw.get("model", {}))
    model_cfg = None
    if model_raw:
        if "vocab_size" not in model_raw:
            if train_cfg.vocab:
                model_raw["vocab_size"] = len(Vocabulary.load(train_cfg.vocab))
            else:
                unit = ModelingUnit.parse(train_cfg.unit)
                lexicon = _load_lexicon(train_cfg.lexicon, unit, required=False)
                utterances = audio_io.load_manifest(train_cfg.manifest)
                model_raw["vocab_size"] = len(
                    build_vocabulary((u.text for u in utterances), unit, lexicon)
                )
        model_cfg = ModelConfig.from_dict(model_raw)
    final = run_phase(train_cfg, model_cfg, resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _model_from_checkpoint(path):
    config, arrays, extra = load_checkpoint(path)
    if "vocab_tokens" not in extra:
        raise ValueError(
            f"{path}: checkpoint lacks decode metadata (use a *_final.ckpt "
            "written by `ttasr train`)"
        )
    model = TransducerModel(config)
    load_parameters(
        model, {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    )
    vocab = Vocabulary(tuple(extra["vocab_tokens"]))
    unit = ModelingUnit.parse(extra["unit"])
    return model, vocab, unit


def _cmd_decode(args) -> int:
    model, vocab, unit = _model_from_checkpoint(args.ckpt)
    utterances = audio_io.load_manifest(args.manifest)
    fbank = features.FbankConfig(d=model.config.feat_dim)

    def decode_one(utt):
        feat = _featurize_one(utt, args.manifest, fbank)
        if args.beam and args.beam > 1:
            hyp = beam_decode(model, feat, args.beam, args.max_symbols)
        elif args.beam == 1:
            hyp = beam_decode(model, feat, 1, args.max_symbols)
        else:
            hyp = greedy_decode(model, feat, args.max_symbols)
        tokens = [vocab.token_of(i) for i in hyp.ids]
        joiner = "" if unit is ModelingUnit.CHARACTER else " "
        return {
            "audio": utt.audio_path,
            "hyp_tokens": tokens,
            "hyp_text": joiner.join(tokens),
            "log_prob": hyp.log_prob,
        }

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(decode_one, utterances))
    else:
        rows = [decode_one(u) for u in utterances]
    with open(args.out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    print(f"decoded {len(rows)} utterances to {args.out}")
    return 0


def _cmd_score(args) -> int:
    unit = ModelingUnit.parse(args.unit)
    lexicon = _load_lexicon(args.lexicon, unit, required=False)
    refs = audio_io.load_manifest(args.ref)
    with open(args.hyp, "r", encoding="utf-8") as fh:
        hyps = {row["audio"]: row for row in map(json.loads, fh) if row}
    by_set: dict[str, list] = {}
    malformed = 0
    for ref in refs:
        if ref.audio_path not in hyps:
            raise ValueError(f"hypothesis file has no row for {ref.audio_path!r}")
        hyp_tokens = hyps[ref.audio_path]["hyp_tokens"]
        pair = metrics.score_pair(ref.text, hyp_tokens, unit, lexicon)
        malformed += pair.malformed_hyp
        by_set.setdefault(ref.dataset, []).append(pair)
    rows = []
    for name in sorted(by_set):
        pairs = by_set[name]
        wer = metrics.aggregate(p.wer for p in pairs)
        cers = [p.cer for p in pairs if p.cer is not None]
        cer = metrics.aggregate(cers) if cers else None
        rows.append((name, wer, cer))
    if malformed:
        print(
            f"warning: {malformed} hypotheses had malformed '#' structure "
            "(scored at token level)",
            file=sys.stderr,
        )
    print(metrics.format_report(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttasr",
        description="Desk-scale Mandarin transformer-transducer pipeline.",
        epilog=(
            "Flag defaults can be overridden via TTASR_<FLAG> environment "
            "variables (UPPER_SNAKE), e.g. TTASR_SEED=7 ttasr synth-corpus ..."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate a deterministic WAV corpus")
    p.add_argument("--n", type=int, default=_env_default("n", 20, int),
                   help="number of utterances (half 8 kHz, half 16 kHz)")
    p.add_argument("--seed", type=int, default=_env_default("seed", 0, int),
                   help="seed for all randomness")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth_corpus)

    p = sub.add_parser("featurize", help="write normalized fbank features")
    p.add_argument("--manifest", required=True, help="JSON Lines manifest")
    p.add_argument("--out", required=True, help="feature archive path")
    p.add_argument("--d", type=int, default=_env_default("d", 80, int),
                   help="mel bin count")
    p.add_argument("--config", default=None,
                   help="JSON file with FbankConfig field overrides")
    p.add_argument("--jobs", type=int, default=_env_default("jobs", 1, int),
                   help="parallel extraction workers (default 1, deterministic)")
    p.set_defaults(func=_cmd_featurize)

    p = sub.add_parser("build-vocab", help="build a vocabulary file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--unit", required=True,
                   help="initial_final_tone | syllable_tone | character")
    p.add_argument("--lexicon", default=None,
                   help="lexicon TSV path, or 'builtin' (required for syllable units)")
    p.add_argument("--out", required=True, help="vocabulary file path")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--config", required=True,
                   help="JSON config with 'train' and optional 'model' sections")
    p.add_argument("--phase", default=None,
                   help="ctc_pretrain | rnnt_finetune (overrides config)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("decode", help="decode a manifest with a checkpoint")
    p.add_argument("--ckpt", required=True, help="final training checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output JSON Lines path")
    p.add_argument("--beam", type=int, default=_env_default("beam", 0, int),
                   help="beam width; 0 means greedy decoding")
    p.add_argument("--max-symbols", type=int,
                   default=_env_default("max_symbols", 5, int),
                   help="per-frame emission cap")
    p.add_argument("--jobs", type=int, default=_env_default("jobs", 1, int))
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("score", help="WER/CER report from ref manifest and hyps")
    p.add_argument("--ref", required=True, help="reference manifest JSON Lines")
    p.add_argument("--hyp", required=True, help="decode output JSON Lines")
    p.add_argument("--unit", required=True)
    p.add_argument("--lexicon", default=None,
                   help="lexicon TSV path or 'builtin' (packaged default if omitted)")
    p.set_defaults(func=_cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _print_resolved(args.command, args)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TtasrError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
