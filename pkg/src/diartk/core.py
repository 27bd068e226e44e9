"""Domain types and segmentation shared by the whole toolkit.

Times are double-precision seconds; comparisons use a 1e-9 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TIME_TOL = 1e-9


class ParameterError(ValueError):
    """Raised when an operation receives arguments violating its contract."""


@dataclass(frozen=True, order=True)
class Segment:
    """A time extent [start, end] in seconds, end strictly after start."""

    start: float
    end: float

    def __post_init__(self):
        if not (np.isfinite(self.start) and np.isfinite(self.end)):
            raise ParameterError(f"segment times must be finite, got {self}")
        if self.start < 0:
            raise ParameterError(f"segment start must be >= 0, got {self.start}")
        if self.end - self.start <= 0:
            raise ParameterError(f"segment must have positive duration, got {self}")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def middle(self) -> float:
        return 0.5 * (self.start + self.end)

    def overlap(self, other: "Segment") -> float:
        """Duration of the intersection with another segment (0 if disjoint)."""
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))


@dataclass
class EmbeddingSequence:
    """Ordered per-segment embeddings for one recording.

    vectors is an (n, dim) float array aligned with segments.
    """

    recording_id: str
    segments: list[Segment]
    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ParameterError("vectors must be a 2-D (n, dim) array")
        if len(self.segments) != self.vectors.shape[0]:
            raise ParameterError(
                f"{len(self.segments)} segments but {self.vectors.shape[0]} vectors"
            )
        if len(self.segments) == 0:
            raise ParameterError("embedding sequence needs at least one segment")
        starts = [s.start for s in self.segments]
        if any(b < a - TIME_TOL for a, b in zip(starts, starts[1:])):
            raise ParameterError("segments must be in nondecreasing start order")
        if not np.all(np.isfinite(self.vectors)):
            raise ParameterError("embedding vectors must be finite")

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class Annotation:
    """Speaker-labeled regions for one recording.

    Used for both references (which may contain overlapping regions) and
    hypotheses (which this toolkit always emits non-overlapping).
    """

    recording_id: str
    regions: list[tuple[Segment, str]] = field(default_factory=list)

    def __post_init__(self):
        for seg, label in self.regions:
            if not isinstance(label, str) or not label:
                raise ParameterError(f"speaker label must be a nonempty string, got {label!r}")

    def speakers(self) -> list[str]:
        """Distinct labels in order of first appearance."""
        seen: dict[str, None] = {}
        for _, label in self.regions:
            seen.setdefault(label)
        return list(seen)

    def by_speaker(self) -> dict[str, list[tuple[float, float]]]:
        """Merged (start, end) intervals per speaker."""
        out: dict[str, list[tuple[float, float]]] = {}
        for seg, label in self.regions:
            out.setdefault(label, []).append((seg.start, seg.end))
        return {label: merge_intervals(ivs) for label, ivs in out.items()}

    def total_speech(self) -> float:
        """Duration of the union of all regions."""
        return sum(b - a for a, b in self.support())

    def support(self) -> list[tuple[float, float]]:
        """Merged union of all regions regardless of speaker."""
        return merge_intervals([(s.start, s.end) for s, _ in self.regions])


def merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Sort intervals and merge any that overlap or touch (within TIME_TOL)."""
    if not intervals:
        return []
    ivs = sorted(intervals)
    merged = [ivs[0]]
    for a, b in ivs[1:]:
        la, lb = merged[-1]
        if a <= lb + TIME_TOL:
            merged[-1] = (la, max(lb, b))
        else:
            merged.append((a, b))
    return merged


def uniform_segment(
    speech_regions: list[Segment], window: float, step: float
) -> list[Segment]:
    """Tile speech regions with fixed-size overlapping windows.

    Within each region, windows start every `step` seconds and are emitted
    while they fit. A region shorter than the window becomes one segment.
    Trailing speech is picked up by a final window flush with the region end
    when at least `step` seconds remain past the last regular window start.
    """
    if window <= 0 or step <= 0:
        raise ParameterError(f"window and step must be positive, got {window}, {step}")
    if step > window + TIME_TOL:
        raise ParameterError(f"step {step} must not exceed window {window}")
    _check_regions(speech_regions)

    out: list[Segment] = []
    for region in speech_regions:
        if region.duration < window - TIME_TOL:
            out.append(Segment(region.start, region.end))
            continue
        k = 0
        while region.start + k * step + window <= region.end + TIME_TOL:
            start = region.start + k * step
            out.append(Segment(start, min(start + window, region.end)))
            k += 1
        uncovered = region.end - (region.start + (k - 1) * step + window)
        leftover = region.end - (region.start + k * step)
        if uncovered > TIME_TOL and leftover >= step - TIME_TOL:
            out.append(Segment(region.end - window, region.end))
    return out


def _check_regions(regions: list[Segment]) -> None:
    for prev, cur in zip(regions, regions[1:]):
        if cur.start < prev.end - TIME_TOL:
            raise ParameterError(f"speech regions overlap: {prev} and {cur}")


def segment_label(segment: Segment, reference: Annotation) -> str | None:
    """Label a segment with the most talkative reference speaker.

    Talk time is measured inside the central half-window of the segment.
    Ties break to the lexicographically smallest label; returns None when no
    reference speech intersects the central region.
    """
    quarter = segment.duration / 4.0
    center_lo = segment.start + quarter
    center_hi = segment.end - quarter
    central = Segment(center_lo, center_hi)

    talk: dict[str, float] = {}
    for seg, label in reference.regions:
        ov = central.overlap(seg)
        if ov > 0:
            talk[label] = talk.get(label, 0.0) + ov
    if not talk or max(talk.values()) <= TIME_TOL:
        return None
    best = max(talk.values())
    winners = sorted(label for label, t in talk.items() if t >= best - TIME_TOL)
    return winners[0]


def reference_matrix(labels: list[str]) -> np.ndarray:
    """Binary same-speaker matrix: entry (i, j) is 1 iff labels match."""
    if len(labels) < 1:
        raise ParameterError("need at least one label")
    arr = np.asarray(labels, dtype=object)
    return (arr[:, None] == arr[None, :]).astype(np.float64)


def check_similarity_matrix(values: np.ndarray, normalized: bool = False) -> np.ndarray:
    """Validate an n-by-n similarity matrix, returning it as float64."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ParameterError(f"similarity matrix must be square, got shape {values.shape}")
    if values.shape[0] < 1:
        raise ParameterError("similarity matrix must be at least 1x1")
    if not np.all(np.isfinite(values)):
        raise ParameterError("similarity matrix entries must be finite")
    if normalized and (values.min() < -1e-9 or values.max() > 1 + 1e-9):
        raise ParameterError("normalized similarity entries must lie in [0, 1]")
    return values
