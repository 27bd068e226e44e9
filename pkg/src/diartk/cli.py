"""Command-line surface: gen, train-plda, train-lstm, diarize, eval, fuse, experiment.

Every subcommand accepts --seed and writes its outputs under a user-supplied
directory (or file); experiment runs leave a manifest describing the exact
configuration used.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import fileio, neural, pipeline, scoring
from .core import segment_label
from .evaluate import der
from .synth import CorpusConfig, gen_corpus


def _add_seed(parser):
    parser.add_argument("--seed", type=int, default=0)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diartk",
        description="Speaker diarization backend toolkit on precomputed embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic embedding corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--recordings", type=int, default=20)
    p.add_argument("--speakers-min", type=int, default=2)
    p.add_argument("--speakers-max", type=int, default=5)
    p.add_argument("--duration-min", type=float, default=60.0)
    p.add_argument("--duration-max", type=float, default=300.0)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--within-spread", type=float, default=0.3)
    p.add_argument("--between-spread", type=float, default=1.0)
    p.add_argument("--turn-hold-prob", type=float, default=0.9)
    p.add_argument("--turn-gap", type=float, default=0.0)
    _add_seed(p)

    p = sub.add_parser("train-plda", help="fit a PLDA model on a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model checkpoint path")
    _add_seed(p)

    p = sub.add_parser("train-lstm", help="train the Bi-LSTM pair scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model checkpoint path")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--fc-size", type=int, default=64)
    p.add_argument("--lr0", type=float, default=0.01)
    p.add_argument("--max-block", type=int, default=400)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    p.add_argument("--loss-log", help="write per-epoch loss log to this file")
    _add_seed(p)

    p = sub.add_parser("diarize", help="diarize every recording in a corpus directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output RTTM path")
    p.add_argument("--scorer", choices=list(scoring.SCORER_KINDS), default="cosine")
    p.add_argument("--model", help="checkpoint for plda/neural scorers")
    p.add_argument("--backend", choices=["spectral", "ahc"], default="spectral")
    p.add_argument("--threshold", type=float, required=True,
                   help="beta for spectral, alpha for ahc")
    p.add_argument("--no-enhance", action="store_true")
    p.add_argument("--max-block", type=int, default=400)
    _add_seed(p)

    p = sub.add_parser("eval", help="score hypothesis RTTM against reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--include-overlap", action="store_true",
                   help="score reference overlap regions too")
    _add_seed(p)

    p = sub.add_parser("fuse", help="diarize from a weighted fusion of two scorers")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output RTTM path")
    p.add_argument("--scorers", required=True,
                   help="comma-separated scorer list, e.g. neural,plda")
    p.add_argument("--weights", required=True, help="comma-separated weights")
    p.add_argument("--models", default="",
                   help="comma-separated checkpoints aligned with --scorers "
                        "(empty entry for cosine)")
    p.add_argument("--backend", choices=["spectral", "ahc"], default="spectral")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--no-enhance", action="store_true")
    p.add_argument("--max-block", type=int, default=400)
    _add_seed(p)

    p = sub.add_parser("experiment", help="k-fold train/tune/test comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--systems", required=True,
                   help="comma-separated systems like cosine+spectral,plda+ahc,"
                        "neural+spectral or fusion specs like "
                        "neural*plda+spectral:0.5,0.5")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--lr0", type=float, default=0.01)
    p.add_argument("--max-block", type=int, default=400)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float64")
    p.add_argument("--no-enhance", action="store_true")
    p.add_argument("--ttest", help="two system names, comma separated")
    _add_seed(p)

    return parser


def parse_system(spec: str, enhance: bool) -> pipeline.SystemSpec:
    """Parse 'scorer+backend' or 'scorerA*scorerB+backend:w1,w2'."""
    weights = None
    if ":" in spec:
        spec, wtext = spec.split(":", 1)
        weights = tuple(float(w) for w in wtext.split(","))
    if "+" not in spec:
        raise ValueError(f"system {spec!r} must look like scorer+backend")
    scorer_part, backend = spec.rsplit("+", 1)
    scorers = tuple(scorer_part.split("*"))
    for s in scorers:
        if s not in scoring.SCORER_KINDS:
            raise ValueError(f"unknown scorer {s!r} in system {spec!r}")
    if backend not in ("spectral", "ahc"):
        raise ValueError(f"unknown backend {backend!r} in system {spec!r}")
    if len(scorers) == 1:
        return pipeline.SystemSpec(name=spec, scorer=scorers[0], backend=backend,
                                   enhance=enhance)
    return pipeline.SystemSpec(name=spec, scorer=scorers[0], backend=backend,
                               enhance=enhance, fuse_scorers=scorers,
                               fuse_weights=weights)


def _load_corpus_labeled(directory):
    corpus = fileio.read_corpus(directory)
    if not corpus:
        raise ValueError(f"no recordings found in {directory}")
    return corpus


def _cmd_gen(args) -> int:
    cfg = CorpusConfig(
        n_recordings=args.recordings,
        speakers_min=args.speakers_min,
        speakers_max=args.speakers_max,
        duration_min=args.duration_min,
        duration_max=args.duration_max,
        embedding_dim=args.dim,
        turn_hold_prob=args.turn_hold_prob,
        within_spread=args.within_spread,
        between_spread=args.between_spread,
        turn_gap_seconds=args.turn_gap,
        seed=args.seed,
    )
    corpus = gen_corpus(cfg)
    fileio.write_corpus(args.out, corpus)
    manifest = {"command": "gen", "config": cfg.__dict__,
                "recordings": [seq.recording_id for seq, _ in corpus]}
    (Path(args.out) / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(corpus)} recordings to {args.out}")
    return 0


def _cmd_train_plda(args) -> int:
    corpus = _load_corpus_labeled(args.data)
    pairs = []
    for seq, ref in corpus:
        for seg, vec in zip(seq.segments, seq.vectors):
            label = segment_label(seg, ref)
            if label is not None:
                pairs.append((vec, f"{seq.recording_id}:{label}"))
    model = scoring.plda_fit(pairs)
    fileio.save_model(args.out, model)
    print(f"PLDA fitted on {len(pairs)} vectors "
          f"(effective dim {model.effective_dim}); saved to {args.out}")
    return 0


def _cmd_train_lstm(args) -> int:
    corpus = _load_corpus_labeled(args.data)
    labeled = []
    for seq, ref in corpus:
        subset = pipeline._labeled_subset(seq, ref)
        if subset is not None:
            labeled.append(subset)
    cfg = neural.TrainConfig(
        lr0=args.lr0, epochs=args.epochs, hidden_size=args.hidden,
        fc_size=args.fc_size, max_block=args.max_block, seed=args.seed,
        dtype=args.dtype)
    model, history = neural.train(labeled, cfg)
    fileio.save_model(args.out, model)
    if args.loss_log:
        lines = [f"{epoch} {lr:.8g} {loss:.8f}" for epoch, lr, loss in history]
        Path(args.loss_log).write_text("\n".join(lines) + "\n", encoding="ascii")
    print(f"trained {args.epochs} epochs on {len(labeled)} recordings; "
          f"final loss {history[-1][2]:.4f}; saved to {args.out}")
    return 0


def _load_models(scorers, model_paths):
    models = {}
    paths = model_paths.split(",") if model_paths else []
    for idx, scorer in enumerate(scorers):
        if scorer == "cosine":
            continue
        if idx >= len(paths) or not paths[idx]:
            raise ValueError(f"scorer {scorer!r} needs a model checkpoint")
        models[scorer] = fileio.load_model(paths[idx])
    return models


def _cmd_diarize(args) -> int:
    corpus = _load_corpus_labeled(args.data)
    models = {}
    if args.scorer in ("plda", "neural"):
        if not args.model:
            raise ValueError(f"scorer {args.scorer!r} requires --model")
        models[args.scorer] = fileio.load_model(args.model)
    cfg = pipeline.PipelineConfig(
        scorer=args.scorer, backend=args.backend, enhance=not args.no_enhance,
        threshold=args.threshold, seed=args.seed, max_block=args.max_block)
    hyps = [pipeline.diarize(seq, cfg, models) for seq, _ in corpus]
    fileio.write_rttm(args.out, hyps)
    print(f"diarized {len(hyps)} recordings -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    refs = {a.recording_id: a for a in fileio.read_rttm(args.ref)}
    hyps = {a.recording_id: a for a in fileio.read_rttm(args.hyp)}
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise ValueError(f"hypothesis missing recordings: {', '.join(missing)}")
    total_confusion = total_scored = 0.0
    for rec in sorted(refs):
        report = der(refs[rec], hyps[rec], collar=args.collar,
                     exclude_overlap=not args.include_overlap)
        total_confusion += report.confusion
        total_scored += report.scored_time
        print(f"{rec}: DER {100.0 * report.der:.3f}% "
              f"(confusion {report.confusion:.3f}s / scored {report.scored_time:.3f}s, "
              f"miss {report.missed:.3f}s, fa {report.false_alarm:.3f}s)")
    overall = total_confusion / total_scored if total_scored else 0.0
    print(f"OVERALL: DER {100.0 * overall:.3f}% over {total_scored:.3f}s scored")
    return 0


def _cmd_fuse(args) -> int:
    from .enhance import enhance as enhance_matrix
    from .evaluate import labels_to_annotation

    corpus = _load_corpus_labeled(args.data)
    scorers = tuple(args.scorers.split(","))
    weights = [float(w) for w in args.weights.split(",")]
    models = _load_models(scorers, args.models)
    hyps = []
    for seq, _ in corpus:
        parts = []
        for scorer in scorers:
            values = scoring.similarity_matrix(
                seq, scorer, model=models.get(scorer), max_block=args.max_block)
            if not args.no_enhance:
                values = enhance_matrix(values)
            parts.append(values)
        fused = scoring.fuse(parts, weights)
        labels = pipeline._cluster(fused, args.backend, args.threshold, args.seed)
        hyps.append(labels_to_annotation(seq.segments, labels,
                                         recording_id=seq.recording_id))
    fileio.write_rttm(args.out, hyps)
    print(f"fused {'+'.join(scorers)} over {len(hyps)} recordings -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    corpus = _load_corpus_labeled(args.data)
    systems = [parse_system(spec, enhance=not args.no_enhance)
               for spec in args.systems.split(",") if spec]
    train_cfg = neural.TrainConfig(
        lr0=args.lr0, epochs=args.epochs, hidden_size=args.hidden,
        max_block=args.max_block, seed=args.seed, dtype=args.dtype)
    cfg = pipeline.ExperimentConfig(
        folds=args.folds, seed=args.seed, train=train_cfg,
        max_block=args.max_block,
        ttest_pair=tuple(args.ttest.split(",")) if args.ttest else None)
    report = pipeline.run_experiment(corpus, systems, cfg, out_dir=args.out)
    print((Path(args.out) / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train-plda": _cmd_train_plda,
    "train-lstm": _cmd_train_lstm,
    "diarize": _cmd_diarize,
    "eval": _cmd_eval,
    "fuse": _cmd_fuse,
    "experiment": _cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except Exception as err:  # surface stage-tagged one-liners, not tracebacks
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
