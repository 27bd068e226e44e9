"""Clustering backends over similarity matrices.

Spectral clustering follows the random-walk normalized Laplacian recipe:
zero the diagonal, build D^-1 (D - S), count eigenvalues below a threshold
to pick k, and k-means the rows of the k smallest eigenvectors. The
agglomerative backend merges average-linkage cluster pairs until their best
similarity drops below a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import ParameterError, check_similarity_matrix

EIG_TOL = 1e-9


@dataclass(frozen=True)
class SpectralConfig:
    beta: float = 0.5  # eigenvalue threshold picking the cluster count
    kmeans_restarts: int = 10
    kmeans_max_iter: int = 300
    seed: int = 0
    k_override: int | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ParameterError("beta must be positive")
        if self.kmeans_restarts < 1 or self.kmeans_max_iter < 1:
            raise ParameterError("k-means restarts and max_iter must be >= 1")
        if self.k_override is not None and self.k_override < 1:
            raise ParameterError("k_override must be >= 1")


@dataclass(frozen=True)
class AhcConfig:
    alpha: float = 0.5  # stop merging below this inter-cluster similarity
    linkage: str = "average"

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ParameterError("alpha must be finite")
        if self.linkage != "average":
            raise ParameterError(f"unsupported linkage {self.linkage!r}")


def laplacian(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Random-walk normalized Laplacian D^-1 (D - S) and the degree vector.

    The diagonal of S is zeroed first. Zero-degree rows come out all zero,
    so every isolated node contributes a 0 eigenvalue (its own component).
    """
    s = check_similarity_matrix(values)
    if s.min() < 0:
        raise ParameterError("laplacian requires nonnegative similarities")
    s = s.copy()
    np.fill_diagonal(s, 0.0)
    degrees = s.sum(axis=1)
    lap = np.diag(degrees) - s
    safe = np.where(degrees > 0, degrees, 1.0)
    lap_norm = lap / safe[:, None]
    lap_norm[degrees == 0, :] = 0.0
    return lap_norm, degrees


def estimate_k(eigenvalues: np.ndarray, beta: float) -> int:
    """Number of eigenvalues below beta, floored at one."""
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
    return max(1, int(np.sum(eigenvalues < beta)))


def _spectral_decompose(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and random-walk eigenvectors via the symmetric form.

    D^-1/2 (D - S) D^-1/2 shares its spectrum with D^-1 (D - S); eigenvectors
    map back through D^-1/2 scaling. Zero-degree rows/columns are zeroed so
    isolated nodes keep their 0 eigenvalue with an indicator eigenvector.

    Asymmetric inputs (row-normalized enhanced matrices, raw neural scores)
    are average-symmetrized first; a real spectrum needs a symmetric graph.
    """
    s = check_similarity_matrix(values)
    if s.min() < 0:
        raise ParameterError("spectral clustering requires nonnegative similarities")
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 0.0)
    degrees = s.sum(axis=1)
    isolated = degrees == 0
    inv_sqrt = 1.0 / np.sqrt(np.where(isolated, 1.0, degrees))
    sym = np.eye(s.shape[0]) - inv_sqrt[:, None] * s * inv_sqrt[None, :]
    sym[isolated, :] = 0.0
    sym[:, isolated] = 0.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[0] < -1e-6 or eigvals[-1] > 2.0 + 1e-6:
        raise RuntimeError(
            f"normalized Laplacian spectrum escaped [0, 2]: "
            f"[{eigvals[0]}, {eigvals[-1]}]")
    eigvals = np.clip(eigvals, 0.0, 2.0)
    rows = eigvecs * inv_sqrt[:, None]
    return eigvals, rows


def spectral_cluster(values: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Cluster labels 0..k-1 from the paper-style spectral pipeline."""
    eigvals, rows = _spectral_decompose(values)
    return _spectral_assign(eigvals, rows, cfg)


def _spectral_assign(eigvals: np.ndarray, rows: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    n = rows.shape[0]
    k = cfg.k_override if cfg.k_override is not None else estimate_k(eigvals, cfg.beta)
    k = min(k, n)
    embedding = rows[:, :k]
    labels, _ = kmeans(embedding, k, seed=cfg.seed,
                       restarts=cfg.kmeans_restarts, max_iter=cfg.kmeans_max_iter)
    return labels


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 300,
) -> tuple[np.ndarray, float]:
    """Seeded k-means++ with restarts; best inertia wins, first restart on ties.

    Returns (labels, inertia).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    best: tuple[float, np.ndarray] | None = None
    for _ in range(restarts):
        labels, inertia, _ = _kmeans_single(points, k, rng, max_iter)
        if best is None or inertia < best[0]:
            best = (inertia, labels)
    return best[1], best[0]


def _kmeans_single(points, k, rng, max_iter):
    """One Lloyd run; also returns the per-iteration objective history."""
    n = points.shape[0]
    centers = _kmeans_pp_init(points, k, rng)
    prev_labels = None
    history: list[float] = []
    labels = np.zeros(n, dtype=np.intp)
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), labels]
        for j in range(k):
            if not np.any(labels == j):
                # Re-seat an empty cluster on the point currently worst served.
                worst = int(point_d2.argmax())
                labels[worst] = j
                point_d2[worst] = 0.0
        history.append(float(point_d2.sum()))
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
        prev_labels = labels
    return labels, history[-1], history


def _kmeans_pp_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = _sq_dists(points, centers[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = points[idx]
        d2 = np.minimum(d2, _sq_dists(points, centers[j:j + 1]).ravel())
    return centers


def _sq_dists(points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


# ---------------------------------------------------------------------------
# Agglomerative clustering. The best-pair similarity is non-increasing under
# average linkage, so the merge order never depends on the stopping
# threshold: the full merge trace is computed once and cut per alpha.
# Threshold tuning reuses the trace.
# ---------------------------------------------------------------------------

@dataclass
class AhcTrace:
    n: int
    merges: list[tuple[int, int, float]] = field(default_factory=list)  # (a, b, sim)


def ahc_trace(values: np.ndarray) -> AhcTrace:
    """Full average-linkage merge sequence down to one cluster.

    Ties break on the lexicographically smallest active pair. Recorded pairs
    are original point indices acting as cluster representatives; the
    smaller-index representative survives each merge.

    Per-row best-partner caching keeps this near O(n^2) instead of scanning
    the whole matrix every merge.
    """
    s = check_similarity_matrix(values)
    if s.min() < 0:
        raise ParameterError("ahc requires nonnegative similarities")
    sim = np.maximum(s, s.T).astype(np.float64)
    n = sim.shape[0]
    trace = AhcTrace(n=n)
    np.fill_diagonal(sim, -np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n, dtype=np.int64)
    best_sim = np.full(n, -np.inf)
    best_to = np.full(n, -1, dtype=np.intp)
    for i in range(n):
        if n > 1:
            best_to[i] = int(sim[i].argmax())
            best_sim[i] = sim[i, best_to[i]]

    for _ in range(n - 1):
        a0 = int(np.where(active, best_sim, -np.inf).argmax())
        b0 = int(best_to[a0])
        merge_sim = float(best_sim[a0])
        a, b = (a0, b0) if a0 < b0 else (b0, a0)
        trace.merges.append((a, b, merge_sim))

        # Average linkage: the merged cluster's similarity to any other is the
        # size-weighted mean of its parents' similarities.
        merged = (sizes[a] * sim[a] + sizes[b] * sim[b]) / (sizes[a] + sizes[b])
        merged[a] = -np.inf
        sim[a] = merged
        sim[:, a] = merged
        sim[b, :] = -np.inf
        sim[:, b] = -np.inf
        active[b] = False
        sizes[a] += sizes[b]
        if not np.any(active & (np.arange(n) != a)):
            break

        others = active.copy()
        others[a] = False
        # Rows whose cached best pointed into the merged pair must rescan;
        # everyone else only checks their new similarity to the merged row.
        stale = others & ((best_to == a) | (best_to == b))
        improved = others & ~stale & (
            (sim[:, a] > best_sim) | ((sim[:, a] == best_sim) & (a < best_to)))
        best_sim[improved] = sim[improved, a]
        best_to[improved] = a
        for i in np.flatnonzero(stale):
            j = int(sim[i].argmax())
            best_to[i] = j
            best_sim[i] = sim[i, j]
        j = int(sim[a].argmax())
        best_to[a] = j
        best_sim[a] = sim[a, j]
    return trace


def ahc_cut(trace: AhcTrace, alpha: float) -> np.ndarray:
    """Labels after applying trace merges while their similarity >= alpha."""
    parent = np.arange(trace.n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b, sim in trace.merges:
        if sim < alpha:
            break
        parent[find(b)] = find(a)

    roots = [find(i) for i in range(trace.n)]
    remap: dict[int, int] = {}
    labels = np.empty(trace.n, dtype=np.intp)
    for i, r in enumerate(roots):
        if r not in remap:
            remap[r] = len(remap)
        labels[i] = remap[r]
    return labels


def ahc(values: np.ndarray, cfg: AhcConfig) -> np.ndarray:
    """Agglomerative clustering with average linkage and threshold stop."""
    return ahc_cut(ahc_trace(values), cfg.alpha)


def tune_threshold(
    items: list,
    grid: list[float],
    backend: str,
    cluster_cfg: SpectralConfig | AhcConfig | None = None,
) -> float:
    """Pick the grid threshold minimizing aggregate DER on training outputs.

    items are (similarity_matrix, reference Annotation, EmbeddingSequence)
    triples; the full downstream pipeline (clustering, hypothesis building,
    DER) runs per candidate. Ties resolve to the smaller threshold.
    """
    from .evaluate import der, labels_to_annotation

    if not items or not grid:
        raise ParameterError("tune_threshold needs nonempty items and grid")
    if backend not in ("spectral", "ahc"):
        raise ParameterError(f"unknown backend {backend!r}")

    if backend == "spectral":
        base = cluster_cfg if cluster_cfg is not None else SpectralConfig()
        decomposed = [_spectral_decompose(s) for s, _, _ in items]
    else:
        base = cluster_cfg if cluster_cfg is not None else AhcConfig()
        traces = [ahc_trace(s) for s, _, _ in items]

    best_threshold = None
    best_der = None
    for threshold in sorted(grid):
        confusion = 0.0
        scored = 0.0
        for idx, (_, reference, seq) in enumerate(items):
            if backend == "spectral":
                eigvals, rows = decomposed[idx]
                labels = _spectral_assign(eigvals, rows, replace(base, beta=threshold))
            else:
                labels = ahc_cut(traces[idx], threshold)
            hyp = labels_to_annotation(seq.segments, labels,
                                       recording_id=reference.recording_id)
            report = der(reference, hyp)
            confusion += report.confusion
            scored += report.scored_time
        aggregate = confusion / scored if scored > 0 else 0.0
        if best_der is None or aggregate < best_der:
            best_der = aggregate
            best_threshold = threshold
    return float(best_threshold)
