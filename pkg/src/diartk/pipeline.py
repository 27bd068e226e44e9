"""End-to-end diarization runs and the k-fold experiment driver.

A system is a (scorer, backend) pair with optional matrix-level fusion of
several scorers. Experiments train scorers on the training folds, tune the
clustering threshold on training outputs, evaluate the held-out fold, and
combine all folds into one aggregate DER per system.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cluster as cl
from . import neural, scoring
from .core import Annotation, EmbeddingSequence, ParameterError, segment_label
from .enhance import enhance
from .evaluate import DerReport, der, duration_stratified_ttest, kfold_split, labels_to_annotation
from .fileio import write_rttm

logger = logging.getLogger(__name__)

SPECTRAL_GRID = tuple(round(0.1 * i, 2) for i in range(1, 13))  # 0.1 .. 1.2
AHC_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))  # 0.05 .. 0.95


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    scorer: str = "cosine"  # cosine | plda | neural
    backend: str = "spectral"  # spectral | ahc
    enhance: bool = True
    threshold: float | None = None  # beta (spectral) or alpha (ahc)
    seed: int = 0
    max_block: int = 400

    def __post_init__(self):
        if self.scorer not in scoring.SCORER_KINDS:
            raise ParameterError(f"unknown scorer {self.scorer!r}")
        if self.backend not in ("spectral", "ahc"):
            raise ParameterError(f"unknown backend {self.backend!r}")


@dataclass(frozen=True)
class SystemSpec:
    """One experiment column: a scorer (or fused scorers) plus a backend."""

    name: str
    scorer: str = "cosine"
    backend: str = "spectral"
    enhance: bool = True
    fuse_scorers: tuple[str, ...] | None = None
    fuse_weights: tuple[float, ...] | None = None

    def scorers(self) -> tuple[str, ...]:
        return self.fuse_scorers if self.fuse_scorers else (self.scorer,)


@dataclass(frozen=True)
class ExperimentConfig:
    folds: int = 5
    seed: int = 0
    collar: float = 0.25
    spectral_grid: tuple[float, ...] = SPECTRAL_GRID
    ahc_grid: tuple[float, ...] = AHC_GRID
    train: neural.TrainConfig = field(default_factory=neural.TrainConfig)
    max_block: int = 400
    enhance_after_fusion: bool = False  # fuse post-enhancement by default
    ttest_pair: tuple[str, str] | None = None


def _cluster(values: np.ndarray, backend: str, threshold: float, seed: int) -> np.ndarray:
    if backend == "spectral":
        return cl.spectral_cluster(values, cl.SpectralConfig(beta=threshold, seed=seed))
    return cl.ahc(values, cl.AhcConfig(alpha=threshold))


def diarize(seq: EmbeddingSequence, cfg: PipelineConfig, models: dict | None = None) -> Annotation:
    """Similarity matrix, optional enhancement, clustering, hypothesis."""
    models = models or {}
    if cfg.threshold is None:
        raise ParameterError("diarize needs an explicit clustering threshold")
    try:
        values = scoring.similarity_matrix(
            seq, cfg.scorer, model=models.get(cfg.scorer), max_block=cfg.max_block)
    except Exception as err:
        raise PipelineError("scoring", err) from err
    if cfg.enhance:
        try:
            values = enhance(values)
        except Exception as err:
            raise PipelineError("enhance", err) from err
    try:
        labels = _cluster(values, cfg.backend, cfg.threshold, cfg.seed)
    except Exception as err:
        raise PipelineError("clustering", err) from err
    return labels_to_annotation(seq.segments, labels, recording_id=seq.recording_id)


def _segment_labels(seq: EmbeddingSequence, reference: Annotation) -> list[str | None]:
    return [segment_label(seg, reference) for seg in seq.segments]


def _labeled_subset(seq: EmbeddingSequence, reference: Annotation):
    """Drop segments without a reference speaker; None when too few remain."""
    labels = _segment_labels(seq, reference)
    keep = [i for i, label in enumerate(labels) if label is not None]
    if len(keep) < 2:
        return None
    if len(keep) == seq.n:
        return seq, [str(label) for label in labels]
    sub = EmbeddingSequence(
        recording_id=seq.recording_id,
        segments=[seq.segments[i] for i in keep],
        vectors=seq.vectors[keep],
    )
    return sub, [str(labels[i]) for i in keep]


def _fit_models(
    scorers: set[str],
    train_set: list[tuple[EmbeddingSequence, Annotation]],
    cfg: ExperimentConfig,
    fold_idx: int,
) -> dict:
    models: dict = {}
    if "plda" in scorers:
        pairs = []
        for seq, ref in train_set:
            labeled = _labeled_subset(seq, ref)
            if labeled is None:
                continue
            sub, labels = labeled
            pairs.extend(
                (v, f"{sub.recording_id}:{label}")
                for v, label in zip(sub.vectors, labels))
        models["plda"] = scoring.plda_fit(pairs)
    if "neural" in scorers:
        corpus = []
        for seq, ref in train_set:
            labeled = _labeled_subset(seq, ref)
            if labeled is not None:
                corpus.append(labeled)
        train_cfg = replace(cfg.train, seed=cfg.train.seed * 1000 + fold_idx,
                            max_block=cfg.max_block)
        models["neural"], history = neural.train(corpus, train_cfg)
        models["neural_history"] = history
    return models


class _MatrixCache:
    """Raw per-(scorer, recording) similarity matrices for one fold."""

    def __init__(self, models: dict, max_block: int):
        self.models = models
        self.max_block = max_block
        self.raw: dict[tuple[str, str], np.ndarray] = {}

    def get(self, scorer: str, seq: EmbeddingSequence) -> np.ndarray:
        key = (scorer, seq.recording_id)
        if key not in self.raw:
            self.raw[key] = scoring.similarity_matrix(
                seq, scorer, model=self.models.get(scorer), max_block=self.max_block)
        return self.raw[key]


def _system_matrix(system: SystemSpec, seq: EmbeddingSequence, cache: _MatrixCache,
                   cfg: ExperimentConfig) -> np.ndarray:
    """Scorer (or fused) matrix with the system's enhancement policy applied."""
    parts = []
    for scorer in system.scorers():
        values = cache.get(scorer, seq)
        if system.enhance and not cfg.enhance_after_fusion:
            values = enhance(values)
        parts.append(values)
    if len(parts) == 1:
        values = parts[0]
        if system.enhance and cfg.enhance_after_fusion:
            values = enhance(values)
        return values
    weights = system.fuse_weights or tuple(1.0 for _ in parts)
    values = scoring.fuse(parts, list(weights))
    if system.enhance and cfg.enhance_after_fusion:
        values = enhance(values)
    return values


@dataclass
class RecordingResult:
    recording_id: str
    duration: float
    report: DerReport


@dataclass
class SystemResult:
    name: str
    aggregate_der: float
    fold_ders: list[float]
    fold_thresholds: list[float]
    recordings: list[RecordingResult]


@dataclass
class ExperimentReport:
    systems: list[SystemResult]
    folds: list[dict]
    ttest: list | None
    config: ExperimentConfig


def run_experiment(
    corpus: list[tuple[EmbeddingSequence, Annotation]],
    systems: list[SystemSpec],
    cfg: ExperimentConfig,
    out_dir=None,
) -> ExperimentReport:
    """K-fold train/tune/test over the corpus for every system."""
    if not corpus:
        raise ParameterError("experiment corpus is empty")
    names = [s.name for s in systems]
    if len(set(names)) != len(names):
        raise ParameterError("system names must be unique")
    by_id = {seq.recording_id: (seq, ref) for seq, ref in corpus}
    if len(by_id) != len(corpus):
        raise ParameterError("duplicate recording ids in corpus")

    folds = kfold_split(sorted(by_id), k=cfg.folds, seed=cfg.seed)
    fold_info = []
    results: dict[str, list[tuple[int, str, DerReport]]] = {s.name: [] for s in systems}
    thresholds: dict[str, list[float]] = {s.name: [] for s in systems}
    hypotheses: dict[str, list[Annotation]] = {s.name: [] for s in systems}

    needed_scorers = {scorer for s in systems for scorer in s.scorers()}
    for fold_idx, test_ids in enumerate(folds):
        test_set = [by_id[r] for r in sorted(test_ids)]
        train_ids = sorted(set(by_id) - set(test_ids))
        train_set = [by_id[r] for r in train_ids]
        assert not set(test_ids) & set(train_ids)
        fold_info.append({"fold": fold_idx, "train": train_ids,
                          "test": sorted(test_ids)})

        logger.info("fold %d: training models on %d recordings", fold_idx, len(train_set))
        models = _fit_models(needed_scorers, train_set, cfg, fold_idx)
        cache = _MatrixCache(models, cfg.max_block)

        for system in systems:
            grid = cfg.spectral_grid if system.backend == "spectral" else cfg.ahc_grid
            train_items = [
                (_system_matrix(system, seq, cache, cfg), ref, seq)
                for seq, ref in train_set
            ]
            base = (cl.SpectralConfig(seed=cfg.seed) if system.backend == "spectral"
                    else cl.AhcConfig())
            threshold = cl.tune_threshold(train_items, list(grid), system.backend, base)
            thresholds[system.name].append(threshold)
            del train_items
            logger.info("fold %d system %s threshold %.3g",
                        fold_idx, system.name, threshold)

            for seq, ref in test_set:
                values = _system_matrix(system, seq, cache, cfg)
                labels = _cluster(values, system.backend, threshold, cfg.seed)
                hyp = labels_to_annotation(seq.segments, labels,
                                           recording_id=seq.recording_id)
                report = der(ref, hyp, collar=cfg.collar)
                results[system.name].append((fold_idx, seq.recording_id, report))
                hypotheses[system.name].append(hyp)

    system_results = []
    for system in systems:
        recs = results[system.name]
        fold_ders = []
        for fold_idx in range(cfg.folds):
            fold_recs = [r for f, _, r in recs if f == fold_idx]
            scored = sum(r.scored_time for r in fold_recs)
            fold_ders.append(sum(r.confusion for r in fold_recs) / scored if scored else 0.0)
        total_scored = sum(r.scored_time for _, _, r in recs)
        aggregate = (sum(r.confusion for _, _, r in recs) / total_scored
                     if total_scored else 0.0)
        recordings = [
            RecordingResult(rec_id, by_id[rec_id][1].total_speech(), report)
            for _, rec_id, report in recs
        ]
        system_results.append(SystemResult(
            name=system.name,
            aggregate_der=aggregate,
            fold_ders=fold_ders,
            fold_thresholds=thresholds[system.name],
            recordings=recordings,
        ))

    ttest = None
    if cfg.ttest_pair is not None:
        ttest = _run_ttest(system_results, cfg.ttest_pair)

    report = ExperimentReport(systems=system_results, folds=fold_info,
                              ttest=ttest, config=cfg)
    if out_dir is not None:
        _write_report(report, hypotheses, out_dir)
    return report


def _run_ttest(system_results: list[SystemResult], pair: tuple[str, str]):
    by_name = {s.name: s for s in system_results}
    for name in pair:
        if name not in by_name:
            raise ParameterError(f"ttest pair references unknown system {name!r}")
    a, b = by_name[pair[0]], by_name[pair[1]]
    recs_a = {r.recording_id: r for r in a.recordings}
    recs_b = {r.recording_id: r for r in b.recordings}
    if set(recs_a) != set(recs_b):
        raise ParameterError("ttest systems cover different recordings")
    results_a = [(recs_a[rec].duration, 100.0 * recs_a[rec].report.der)
                 for rec in sorted(recs_a)]
    results_b = [(recs_b[rec].duration, 100.0 * recs_b[rec].report.der)
                 for rec in sorted(recs_b)]
    return duration_stratified_ttest(results_a, results_b)


def _format_report_text(report: ExperimentReport) -> str:
    lines = ["System                                DER(%)", "-" * 44]
    for system in report.systems:
        lines.append(f"{system.name:<36}  {100.0 * system.aggregate_der:6.2f}")
    lines.append("")
    for system in report.systems:
        per_fold = " ".join(f"{100.0 * d:6.2f}" for d in system.fold_ders)
        thres = " ".join(f"{t:5.2f}" for t in system.fold_thresholds)
        lines.append(f"{system.name}: fold DER(%) [{per_fold}] thresholds [{thres}]")
    if report.ttest is not None:
        lines.append("")
        lines.append("T-test by duration group (accept H0 iff |t| < 1.96)")
        lines.append("group  mean_a  mean_b  t-value  H0")
        for idx, row in enumerate(report.ttest):
            decision = "accepted" if row.h0_accepted else "rejected"
            lines.append(
                f"{idx + 1:>5}  {row.mean_a:6.2f}  {row.mean_b:6.2f}  "
                f"{row.t_value:7.2f}  {decision}")
    return "\n".join(lines) + "\n"


def _write_report(report: ExperimentReport, hypotheses: dict[str, list[Annotation]],
                  out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "tool": "diartk-0.1.0",
        "config": _config_dict(report.config),
        "systems": [s.name for s in report.systems],
        "folds": report.folds,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    payload = {
        "systems": [
            {
                "name": s.name,
                "aggregate_der": s.aggregate_der,
                "fold_ders": s.fold_ders,
                "fold_thresholds": s.fold_thresholds,
                "recordings": [
                    {
                        "recording_id": r.recording_id,
                        "duration": r.duration,
                        "der": r.report.der,
                        "confusion": r.report.confusion,
                        "missed": r.report.missed,
                        "false_alarm": r.report.false_alarm,
                        "scored_time": r.report.scored_time,
                    }
                    for r in s.recordings
                ],
            }
            for s in report.systems
        ],
        "ttest": None if report.ttest is None else [
            {
                "mean_a": row.mean_a,
                "mean_b": row.mean_b,
                "t_value": row.t_value,
                "h0_accepted": row.h0_accepted,
            }
            for row in report.ttest
        ],
    }
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(_format_report_text(report), encoding="utf-8")

    hyp_dir = out_dir / "hypotheses"
    hyp_dir.mkdir(exist_ok=True)
    for name, annotations in hypotheses.items():
        ordered = sorted(annotations, key=lambda a: a.recording_id)
        write_rttm(hyp_dir / f"{_slug(name)}.rttm", ordered)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def _config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
