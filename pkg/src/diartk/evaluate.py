"""Hypothesis construction, DER scoring, fold splitting, and the t-test.

DER here follows the oracle-VAD convention: the headline number is speaker
confusion over scored time. False alarm and miss are still computed and
reported separately. Scoring excludes 0.25 s collars around speaker-change
boundaries inside the reference speech and, by default, regions where two
or more reference speakers talk at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Annotation, ParameterError, Segment, TIME_TOL, merge_intervals

Interval = tuple[float, float]


@dataclass(frozen=True)
class DerReport:
    scored_time: float
    false_alarm: float
    missed: float
    confusion: float
    der: float  # confusion / scored_time
    zero_scored_time: bool = False


@dataclass(frozen=True)
class TTestResult:
    mean_a: float
    mean_b: float
    t_value: float
    h0_accepted: bool
    degenerate: bool = False  # zero pooled variance with differing means


# ---------------------------------------------------------------------------
# Interval algebra on sorted, merged (start, end) lists.
# ---------------------------------------------------------------------------

def _intersect(a: list[Interval], b: list[Interval]) -> list[Interval]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if hi - lo > TIME_TOL:
            out.append((lo, hi))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _subtract(a: list[Interval], b: list[Interval]) -> list[Interval]:
    out = []
    j = 0
    for lo, hi in a:
        cur = lo
        while j < len(b) and b[j][1] <= cur:
            j += 1
        jj = j
        while jj < len(b) and b[jj][0] < hi:
            blo, bhi = b[jj]
            if blo - cur > TIME_TOL:
                out.append((cur, blo))
            cur = max(cur, bhi)
            jj += 1
        if hi - cur > TIME_TOL:
            out.append((cur, hi))
    return out


def _total(a: list[Interval]) -> float:
    return sum(hi - lo for lo, hi in a)


def _overlapped_regions(regions: list[tuple[Segment, str]]) -> list[Interval]:
    """Timeline where at least two distinct speakers are active."""
    events: list[tuple[float, int]] = []
    by_speaker: dict[str, list[Interval]] = {}
    for seg, label in regions:
        by_speaker.setdefault(label, []).append((seg.start, seg.end))
    for ivs in by_speaker.values():
        for lo, hi in merge_intervals(ivs):
            events.append((lo, 1))
            events.append((hi, -1))
    events.sort()
    out: list[Interval] = []
    depth = 0
    start = None
    for time, delta in events:
        depth += delta
        if depth >= 2 and start is None:
            start = time
        elif depth < 2 and start is not None:
            if time - start > TIME_TOL:
                out.append((start, time))
            start = None
    return merge_intervals(out)


def labels_to_annotation(
    segments: list[Segment],
    labels,
    recording_id: str = "",
) -> Annotation:
    """Turn per-segment cluster labels into a non-overlapping hypothesis.

    Consecutive same-label segments that touch or overlap merge into one
    region; where differing labels overlap, the boundary sits at the midpoint
    of the overlapped span.
    """
    if len(segments) != len(labels):
        raise ParameterError(f"{len(segments)} segments but {len(labels)} labels")
    regions: list[tuple[Segment, str]] = []
    current: tuple[float, float, str] | None = None
    for seg, raw in zip(segments, labels):
        label = str(raw)
        if current is None:
            current = (seg.start, seg.end, label)
            continue
        start, end, cur_label = current
        if label == cur_label and seg.start <= end + TIME_TOL:
            current = (start, max(end, seg.end), label)
        elif seg.start < end - TIME_TOL:
            cut = 0.5 * (seg.start + end)
            regions.append((Segment(start, cut), cur_label))
            current = (cut, seg.end, label)
        else:
            regions.append((Segment(start, end), cur_label))
            current = (seg.start, seg.end, label)
    if current is not None:
        regions.append((Segment(current[0], current[1]), current[2]))
    return Annotation(recording_id=recording_id, regions=regions)


def optimal_mapping(reference: Annotation, hypothesis: Annotation) -> dict[str, str | None]:
    """One-to-one hypothesis-to-reference label map maximizing total overlap.

    Solved as a linear assignment over the overlap-duration matrix. Unassigned
    hypothesis labels, and assigned ones with zero overlap, map to None.
    """
    ref_speakers = reference.speakers()
    hyp_speakers = hypothesis.speakers()
    if not ref_speakers or not hyp_speakers:
        return {h: None for h in hyp_speakers}
    ref_ivs = reference.by_speaker()
    hyp_ivs = hypothesis.by_speaker()
    overlap = np.zeros((len(ref_speakers), len(hyp_speakers)))
    for i, r in enumerate(ref_speakers):
        for j, h in enumerate(hyp_speakers):
            overlap[i, j] = _total(_intersect(ref_ivs[r], hyp_ivs[h]))
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    mapping: dict[str, str | None] = {h: None for h in hyp_speakers}
    for i, j in zip(rows, cols):
        if overlap[i, j] > 0:
            mapping[hyp_speakers[j]] = ref_speakers[i]
    return mapping


def _restrict(annotation: Annotation, timeline: list[Interval]) -> Annotation:
    regions = []
    for seg, label in annotation.regions:
        for lo, hi in _intersect([(seg.start, seg.end)], timeline):
            regions.append((Segment(lo, hi), label))
    return Annotation(recording_id=annotation.recording_id, regions=regions)


def _collar_points(reference: Annotation) -> list[float]:
    """Speaker-change boundaries: region edges strictly inside the speech extent.

    Onsets and offsets of the merged speech extent carry no collar; with the
    oracle-VAD convention nothing is scored beyond the extent anyway.
    """
    extent = reference.support()
    points = []
    for seg, _ in reference.regions:
        for b in (seg.start, seg.end):
            inside = any(lo + TIME_TOL < b < hi - TIME_TOL for lo, hi in extent)
            if inside:
                points.append(b)
    return sorted(set(points))


def der(
    reference: Annotation,
    hypothesis: Annotation,
    collar: float = 0.25,
    exclude_overlap: bool = True,
) -> DerReport:
    """Score a hypothesis against a reference.

    Scored time is the reference speech extent minus collars around internal
    speaker-change boundaries and (by default) reference overlap regions.
    The headline DER is confusion / scored_time; false alarm and miss are
    reported alongside. The hypothesis must be non-overlapping.
    """
    per_speaker = sum(_total(ivs) for ivs in hypothesis.by_speaker().values())
    if per_speaker > _total(hypothesis.support()) + 1e-6:
        raise ParameterError("hypothesis regions must not overlap")

    scored = reference.support()
    collars = merge_intervals(
        [(b - collar, b + collar) for b in _collar_points(reference)])
    scored = _subtract(scored, collars)
    if exclude_overlap:
        scored = _subtract(scored, _overlapped_regions(reference.regions))
    scored_time = _total(scored)
    if scored_time <= TIME_TOL:
        return DerReport(0.0, 0.0, 0.0, 0.0, 0.0, zero_scored_time=True)

    ref_scored = _restrict(reference, scored)
    hyp_scored = _restrict(hypothesis, scored)
    mapping = optimal_mapping(ref_scored, hyp_scored)

    ref_ivs = ref_scored.by_speaker()
    hyp_ivs = hyp_scored.by_speaker()
    ref_support = ref_scored.support()
    hyp_sup = hyp_scored.support()

    missed = _total(_subtract(ref_support, hyp_sup))
    false_alarm = _total(_subtract(hyp_sup, ref_support))
    confusion = 0.0
    for h, h_ivs in hyp_ivs.items():
        mapped = mapping[h]
        both = _intersect(h_ivs, ref_support)
        if mapped is not None:
            both = _subtract(both, ref_ivs[mapped])
        confusion += _total(both)

    return DerReport(
        scored_time=scored_time,
        false_alarm=false_alarm,
        missed=missed,
        confusion=confusion,
        der=confusion / scored_time,
    )


def kfold_split(recording_ids: list[str], k: int = 5, seed: int = 0) -> list[list[str]]:
    """Seeded shuffle then round-robin deal into k disjoint folds."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    if k > len(recording_ids):
        raise ParameterError(f"cannot split {len(recording_ids)} recordings into {k} folds")
    rng = np.random.default_rng(seed)
    order = list(recording_ids)
    rng.shuffle(order)
    return [order[i::k] for i in range(k)]


def _pooled_t(sample_a: np.ndarray, sample_b: np.ndarray) -> tuple[float, bool]:
    """Two-sample Student's t with pooled variance; returns (t, degenerate)."""
    na, nb = len(sample_a), len(sample_b)
    mean_a, mean_b = float(sample_a.mean()), float(sample_b.mean())
    var_a = float(sample_a.var(ddof=1)) if na > 1 else 0.0
    var_b = float(sample_b.var(ddof=1)) if nb > 1 else 0.0
    pooled = ((na - 1) * var_a + (nb - 1) * var_b) / (na + nb - 2)
    if pooled <= 0:
        if abs(mean_a - mean_b) <= 1e-300:
            return 0.0, False
        return math.copysign(math.inf, mean_a - mean_b), True
    t = (mean_a - mean_b) / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    return t, False


def duration_stratified_ttest(
    results_a: list[tuple[float, float]],
    results_b: list[tuple[float, float]],
    groups: int = 5,
) -> list[TTestResult]:
    """Per-duration-quintile pooled t-tests between two systems.

    Both inputs are (duration, der) pairs over the same recordings in the
    same order. Recordings are sorted by duration and split into `groups`
    near-equal groups; H0 (equal means) is accepted when |t| < 1.96.
    """
    if len(results_a) != len(results_b):
        raise ParameterError("result lists must cover the same recordings")
    dur_a = np.array([d for d, _ in results_a])
    dur_b = np.array([d for d, _ in results_b])
    if not np.allclose(dur_a, dur_b, atol=1e-9):
        raise ParameterError("durations differ between systems; expected same recordings")
    if len(results_a) < 2 * groups:
        raise ParameterError(f"need at least {2 * groups} recordings for {groups} groups")

    order = np.argsort(dur_a, kind="stable")
    ders_a = np.array([x for _, x in results_a])[order]
    ders_b = np.array([x for _, x in results_b])[order]
    out = []
    for idx in np.array_split(np.arange(len(order)), groups):
        a, b = ders_a[idx], ders_b[idx]
        t, degenerate = _pooled_t(a, b)
        out.append(TTestResult(
            mean_a=float(a.mean()),
            mean_b=float(b.mean()),
            t_value=t,
            h0_accepted=bool(-1.96 < t < 1.96),
            degenerate=degenerate,
        ))
    return out
