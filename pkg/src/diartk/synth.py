"""Synthetic conversation generator with ground-truth annotations.

Stands in for the audio/embedding front-end: speakers are isotropic Gaussian
clouds around random centroids, turn-taking is a per-second first-order
Markov chain, and segments come from the same uniform segmentation the real
pipeline uses. Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Annotation,
    EmbeddingSequence,
    ParameterError,
    Segment,
    segment_label,
    uniform_segment,
)

WINDOW = 1.5
STEP = 0.75


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 3
    duration: float = 120.0
    embedding_dim: int = 16
    turn_hold_prob: float = 0.9  # per-second probability of keeping the turn
    within_spread: float = 0.3
    between_spread: float = 1.0
    turn_gap_seconds: float = 0.0  # silence inserted at each speaker change
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_speakers <= 7:
            raise ParameterError("num_speakers must be in [2, 7]")
        if self.duration <= 0:
            raise ParameterError("duration must be positive")
        if not 0 <= self.turn_hold_prob <= 1:
            raise ParameterError("turn_hold_prob must be a probability")
        if self.within_spread < 0 or self.between_spread <= 0:
            raise ParameterError("spreads must be positive (within may be 0)")
        if self.turn_gap_seconds < 0:
            raise ParameterError("turn_gap_seconds must be >= 0")


@dataclass(frozen=True)
class CorpusConfig:
    """Template for a corpus of conversations with randomized shape."""

    n_recordings: int = 100
    speakers_min: int = 2
    speakers_max: int = 5
    duration_min: float = 60.0
    duration_max: float = 600.0
    embedding_dim: int = 16
    turn_hold_prob: float = 0.9
    within_spread: float = 0.3
    between_spread: float = 1.0
    turn_gap_seconds: float = 0.0
    log_uniform_durations: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_recordings < 1:
            raise ParameterError("n_recordings must be >= 1")
        if not 2 <= self.speakers_min <= self.speakers_max <= 7:
            raise ParameterError("speaker counts must satisfy 2 <= min <= max <= 7")
        if not 0 < self.duration_min <= self.duration_max:
            raise ParameterError("durations must satisfy 0 < min <= max")


def _turn_regions(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[Segment, int]]:
    """Markov turn sequence as merged (region, speaker index) runs."""
    seconds = max(1, int(np.ceil(cfg.duration)))
    states = np.empty(seconds, dtype=np.intp)
    states[0] = rng.integers(cfg.num_speakers)
    for t in range(1, seconds):
        if rng.random() < cfg.turn_hold_prob:
            states[t] = states[t - 1]
        else:
            shift = 1 + rng.integers(cfg.num_speakers - 1)
            states[t] = (states[t - 1] + shift) % cfg.num_speakers
    runs: list[tuple[Segment, int]] = []
    start = 0
    for t in range(1, seconds):
        if states[t] != states[t - 1]:
            runs.append((Segment(float(start), float(t)), int(states[t - 1])))
            start = t
    runs.append((Segment(float(start), cfg.duration), int(states[-1])))
    return runs


def _with_gaps(runs: list[tuple[Segment, int]], gap: float) -> list[tuple[Segment, int]]:
    """Shave half the gap off each side of every internal turn boundary."""
    if gap <= 0 or len(runs) < 2:
        return runs
    half = gap / 2.0
    out = []
    for idx, (seg, spk) in enumerate(runs):
        lo = seg.start + (half if idx > 0 else 0.0)
        hi = seg.end - (half if idx < len(runs) - 1 else 0.0)
        if hi - lo <= 0:
            return []  # a turn vanished; caller retries with a new sequence
        out.append((Segment(lo, hi), spk))
    return out


def gen_conversation(cfg: SynthConfig) -> tuple[EmbeddingSequence, Annotation]:
    """One synthetic recording: embeddings plus its reference annotation.

    Retries the turn sequence (up to 100 times) until every speaker actually
    appears; raises if the duration cannot host them.
    """
    rng = np.random.default_rng(cfg.seed)
    centroids = rng.standard_normal((cfg.num_speakers, cfg.embedding_dim))
    centroids *= cfg.between_spread

    for _ in range(100):
        runs = _with_gaps(_turn_regions(cfg, rng), cfg.turn_gap_seconds)
        if runs and len({spk for _, spk in runs}) == cfg.num_speakers:
            break
    else:
        raise ParameterError(
            f"could not fit {cfg.num_speakers} speakers into {cfg.duration:.1f}s "
            f"after 100 attempts")

    recording_id = f"synth-{cfg.seed:08d}"
    reference = Annotation(
        recording_id=recording_id,
        regions=[(seg, f"spk{spk}") for seg, spk in runs],
    )
    speech = [seg for seg, _ in runs]
    segments = uniform_segment(speech, WINDOW, STEP)
    labels = [segment_label(seg, reference) for seg in segments]
    assert all(label is not None for label in labels)  # speech covers all segments

    indices = np.array([int(label[3:]) for label in labels])
    vectors = centroids[indices]
    if cfg.within_spread > 0:
        vectors = vectors + cfg.within_spread * rng.standard_normal(vectors.shape)
    seq = EmbeddingSequence(recording_id=recording_id, segments=segments, vectors=vectors)
    return seq, reference


def gen_corpus(cfg: CorpusConfig) -> list[tuple[EmbeddingSequence, Annotation]]:
    """Deterministic list of conversations with randomized sizes and seeds."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for idx in range(cfg.n_recordings):
        speakers = int(rng.integers(cfg.speakers_min, cfg.speakers_max + 1))
        if cfg.log_uniform_durations:
            duration = float(np.exp(rng.uniform(
                np.log(cfg.duration_min), np.log(cfg.duration_max))))
        else:
            duration = float(rng.uniform(cfg.duration_min, cfg.duration_max))
        conv_cfg = SynthConfig(
            num_speakers=speakers,
            duration=duration,
            embedding_dim=cfg.embedding_dim,
            turn_hold_prob=cfg.turn_hold_prob,
            within_spread=cfg.within_spread,
            between_spread=cfg.between_spread,
            turn_gap_seconds=cfg.turn_gap_seconds,
            seed=int(rng.integers(2 ** 31 - 1)),
        )
        seq, ref = gen_conversation(conv_cfg)
        seq = replace_recording_id(seq, f"synth-{idx:04d}")
        ref = Annotation(recording_id=seq.recording_id, regions=ref.regions)
        out.append((seq, ref))
    return out


def replace_recording_id(seq: EmbeddingSequence, recording_id: str) -> EmbeddingSequence:
    return EmbeddingSequence(
        recording_id=recording_id, segments=seq.segments, vectors=seq.vectors)
