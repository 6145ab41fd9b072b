"""Command-line entry point: ``phonmatch {synth-data,train,evaluate,infer,report}``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import nn
from .audio import AudioError, read_wav, compute_log_mel
from .data import (DataError, build_closed_vocab_trials, build_training_pairs, extract_features,
                   load_manifest, pad_batch)
from .g2p import LexiconError, default_lexicon, g2p_convert, load_lexicon
from .metrics import ScoredTrial, build_report, read_scores, write_report, write_scores
from .model import PhonMatchNet, load_embedding_file
from .trainer import ConfigError, NumericalAbort, load_config, model_from_checkpoint, score_trials, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phonmatch", description="Text-queried keyword spotting on phoneme/audio matching.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-data", help="render a synthetic keyword corpus")
    p.add_argument("--keywords", required=True, help="text file, one keyword per line")
    p.add_argument("--per-keyword", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="key=value training config")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", help="precomputed embedder outputs (tensor container)")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("evaluate", help="score closed-vocabulary trials")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", required=True, help="text file, one keyword per line")
    p.add_argument("--scores", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--embeddings")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("infer", help="score one recording against a keyword")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="metrics and distance-binned error from a scores CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _lexicon(path):
    return load_lexicon(path) if path else default_lexicon()


def _read_lines(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _show_config(resolved: dict) -> None:
    print("config " + json.dumps(resolved, sort_keys=True), flush=True)


def cmd_synth(args) -> int:
    from .synth import synth_dataset

    _show_config(vars(args))
    manifest = synth_dataset(_read_lines(args.keywords), args.per_keyword, args.seed, args.out,
                             _lexicon(args.lexicon))
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    _show_config({**vars(args), "train": cfg.to_dict()})
    lexicon = _lexicon(args.lexicon)
    entries = load_manifest(args.manifest)
    model = PhonMatchNet(cfg.model_config())
    embedder = load_embedding_file(args.embeddings) if args.embeddings else model.embedder
    noise = read_wav(cfg.noise_wav) if cfg.noise_wav else None
    features = extract_features(entries, embedder, noise, (cfg.noise_snr_min, cfg.noise_snr_max), cfg.seed)
    trials = build_training_pairs(entries, cfg.negatives_per_anchor, cfg.seed, lexicon)
    report = train(model, trials, features, cfg, out_dir=args.out)
    last = report.epochs[-1] if report.epochs else None
    if last is not None:
        print(f"final epoch {last.epoch}: total={last.total:.6f} utt={last.utt:.6f} phon={last.phon:.6f}")
    print(f"best checkpoint: {report.best_checkpoint}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _show_config(vars(args))
    lexicon = _lexicon(args.lexicon)
    model = model_from_checkpoint(args.checkpoint)
    entries = load_manifest(args.manifest)
    vocab = _read_lines(args.vocab)
    trials = build_closed_vocab_trials(entries, vocab, lexicon)
    embedder = load_embedding_file(args.embeddings) if args.embeddings else model.embedder
    features = extract_features(entries, embedder)
    scores = score_trials(model, trials, features)
    scored = [ScoredTrial(t.trial_id, t.keyword, t.y_utt, float(s), t.distance) for t, s in zip(trials, scores)]
    write_scores(args.scores, scored)
    report = build_report(scored, args.bins, args.threshold)
    write_report(args.report, report)
    print(f"EER={report['roc']['eer']:.6f} AUC={report['roc']['auc']:.6f} accuracy@{args.threshold}={report['accuracy']:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    _show_config(vars(args))
    model = model_from_checkpoint(args.checkpoint)
    phonemes = g2p_convert(args.keyword, _lexicon(args.lexicon))
    w = read_wav(args.audio)

    class _Trial:  # minimal stand-in accepted by pad_batch
        keyword_phonemes = phonemes
        y_utt = 0
        y_phon = (0,) * len(phonemes)
        trial_id = args.keyword

    batch = pad_batch([_Trial()], [compute_log_mel(w).astype(np.float32)], [model.embedder(w, None)])
    with nn.no_grad():
        out = model(batch)
    print(f"P_utt={float(out.p_utt.data[0]):.6f}")
    if out.p_phon is not None:
        for ph, p in zip(phonemes, out.p_phon.data[0]):
            print(f"{ph}\t{float(p):.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    _show_config(vars(args))
    report = build_report(read_scores(args.scores), args.bins, args.threshold)
    if args.out:
        write_report(args.out, report)
    else:
        print(json.dumps(report, indent=2))
    return EXIT_OK


COMMANDS = {"synth-data": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
            "infer": cmd_infer, "report": cmd_report}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        print(parser.format_help(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, LexiconError, AudioError, nn.ContainerError, ValueError, KeyError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
