"""Baseline pairwise similarity scorers and matrix-level fusion.

Two scorers live here: a cosine similarity mapped affinely onto [0, 1] and a
two-covariance PLDA whose log-likelihood ratios are squashed by a fixed
logistic. The sequence-aware scorer lives in `neural`; `similarity_matrix`
dispatches to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .core import EmbeddingSequence, ParameterError, check_similarity_matrix

SCORER_KINDS = ("cosine", "plda", "neural")

LOGISTIC_SLOPE = 5.0
COV_RIDGE = 1e-6


class TrainingError(RuntimeError):
    """Raised when model fitting receives degenerate data."""


def logistic_normalize(x):
    """Squash raw scores into (0, 1) with the fixed-slope logistic 1/(1+e^{-5x})."""
    x = np.asarray(x, dtype=np.float64)
    out = expit(LOGISTIC_SLOPE * x)
    return float(out) if out.ndim == 0 else out


def cosine_score(x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Cosine similarity of two vectors mapped onto [0, 1] as (1 + cos)/2."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    ni = np.linalg.norm(x_i)
    nj = np.linalg.norm(x_j)
    if ni == 0.0 or nj == 0.0:
        raise ParameterError("cosine_score requires nonzero vectors")
    cos = float(np.dot(x_i, x_j) / (ni * nj))
    cos = min(1.0, max(-1.0, cos))
    return 0.5 * (1.0 + cos)


@dataclass
class PldaModel:
    """Two-covariance PLDA over whitened, length-normalized embeddings.

    mean/whitening_transform map raw d-dim vectors into the (possibly
    rank-reduced) model space; between_cov and within_cov are the class-mean
    and residual covariances estimated there.
    """

    mean: np.ndarray
    whitening_transform: np.ndarray  # (effective_dim, d)
    between_cov: np.ndarray
    within_cov: np.ndarray
    effective_dim: int
    length_norm: bool = True

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        """Whiten (and by default length-normalize) raw vectors into model space."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.shape[1] != self.mean.shape[0]:
            raise ParameterError(
                f"vector dim {vectors.shape[1]} does not match model dim {self.mean.shape[0]}"
            )
        u = (vectors - self.mean) @ self.whitening_transform.T
        if not self.length_norm:
            return u
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        return u / norms


def estimate_two_covariance(
    vectors: np.ndarray, labels: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form scatter estimates of the two-covariance model.

    Returns (between_cov, within_cov): the covariance of per-speaker means
    (ddof=1 over speakers) and the pooled within-speaker covariance, each
    ridged by COV_RIDGE * I.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels_arr = np.asarray(labels, dtype=object)
    speakers = sorted(set(labels))
    if len(speakers) < 2:
        raise TrainingError("two-covariance estimation needs at least 2 speakers")
    d = vectors.shape[1]

    means = np.stack([vectors[labels_arr == s].mean(axis=0) for s in speakers])
    grand = means.mean(axis=0)
    centered_means = means - grand
    between = centered_means.T @ centered_means / (len(speakers) - 1)

    pooled = np.zeros((d, d))
    residual_dof = 0
    for s in speakers:
        group = vectors[labels_arr == s]
        if group.shape[0] < 2:
            continue
        centered = group - group.mean(axis=0)
        pooled += centered.T @ centered
        residual_dof += group.shape[0] - 1
    if residual_dof == 0:
        within = np.zeros((d, d))
    else:
        within = pooled / residual_dof

    eye = np.eye(d)
    return between + COV_RIDGE * eye, within + COV_RIDGE * eye


def plda_fit(train: list[tuple[np.ndarray, str]]) -> PldaModel:
    """Fit whitening (mean subtraction + full-rank PCA + length norm) and the
    two-covariance model on labeled embeddings.

    Rank-deficient data collapses to its effective rank; all-identical data is
    a training error.
    """
    if len(train) < 2:
        raise TrainingError("need at least two training vectors")
    vectors = np.stack([np.asarray(v, dtype=np.float64) for v, _ in train])
    labels = [label for _, label in train]
    if len(set(labels)) < 2:
        raise TrainingError("PLDA training needs at least 2 speakers")

    mean = vectors.mean(axis=0)
    centered = vectors - mean
    cov = centered.T @ centered / max(1, len(train) - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    tol = max(eigvals[0], 0.0) * 1e-10
    rank = int(np.sum(eigvals > tol))
    if rank == 0:
        raise TrainingError("degenerate training data: zero variance in every direction")
    # Rows project onto principal directions and rescale to unit variance.
    whitening = (eigvecs[:, :rank] / np.sqrt(eigvals[:rank])).T

    model = PldaModel(
        mean=mean,
        whitening_transform=whitening,
        between_cov=np.eye(rank),
        within_cov=np.eye(rank),
        effective_dim=rank,
    )
    u = model.transform(vectors)
    between, within = estimate_two_covariance(u, labels)
    model.between_cov = between
    model.within_cov = within
    return model


def _plda_score_terms(model: PldaModel):
    """Precompute the quadratic-form pieces of the two-covariance LLR.

    Same-speaker hypothesis stacks [u_i; u_j] with covariance blocks
    [[T, B], [B, T]] (T = B + W); different-speaker is block-diagonal
    [[T, 0], [0, T]]. Symmetric 2x2 block structure inverts through
    (T + B) and (T - B) = W.
    """
    total = model.between_cov + model.within_cov
    sum_inv = np.linalg.inv(total + model.between_cov)
    within_inv = np.linalg.inv(model.within_cov)
    total_inv = np.linalg.inv(total)

    diag_block = 0.5 * (sum_inv + within_inv)  # per-vector block of same-cov inverse
    cross_block = 0.5 * (sum_inv - within_inv)
    quad = -0.5 * (diag_block - total_inv)
    cross = -0.5 * 2.0 * cross_block

    sign_s, logdet_sum = np.linalg.slogdet(total + model.between_cov)
    sign_w, logdet_within = np.linalg.slogdet(model.within_cov)
    sign_t, logdet_total = np.linalg.slogdet(total)
    if min(sign_s, sign_w, sign_t) <= 0:
        raise TrainingError("PLDA covariances are not positive definite")
    const = -0.5 * (logdet_sum + logdet_within - 2.0 * logdet_total)
    return quad, cross, const


def plda_score(model: PldaModel, x_i: np.ndarray, x_j: np.ndarray) -> float:
    """Log-likelihood ratio of same-speaker vs different-speaker hypotheses."""
    u = model.transform(np.stack([np.asarray(x_i), np.asarray(x_j)]))
    quad, cross, const = _plda_score_terms(model)
    qi = float(u[0] @ quad @ u[0])
    qj = float(u[1] @ quad @ u[1])
    cij = float(u[0] @ cross @ u[1])
    return qi + qj + cij + const


def _plda_score_matrix(model: PldaModel, vectors: np.ndarray) -> np.ndarray:
    """All-pairs LLR matrix, vectorized over the quadratic forms."""
    u = model.transform(vectors)
    quad, cross, const = _plda_score_terms(model)
    per_vec = np.einsum("ni,ij,nj->n", u, quad, u)
    pair = u @ cross @ u.T
    return per_vec[:, None] + per_vec[None, :] + pair + const


def similarity_matrix(
    seq: EmbeddingSequence,
    scorer: str,
    model=None,
    max_block: int = 400,
) -> np.ndarray:
    """Score every ordered segment pair of a recording into an n-by-n matrix.

    All scorers emit values in [0, 1]: cosine via its affine map, plda via the
    logistic squashing of raw LLRs, neural natively.
    """
    if scorer not in SCORER_KINDS:
        raise ParameterError(f"unknown scorer {scorer!r}, expected one of {SCORER_KINDS}")
    if scorer == "cosine":
        x = seq.vectors
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0.0):
            raise ParameterError("cosine scorer requires nonzero embeddings")
        cos = (x @ x.T) / np.outer(norms, norms)
        values = 0.5 * (1.0 + np.clip(cos, -1.0, 1.0))
    elif scorer == "plda":
        if model is None:
            raise ParameterError("plda scorer requires a fitted PldaModel")
        values = logistic_normalize(_plda_score_matrix(model, seq.vectors))
    else:
        if model is None:
            raise ParameterError("neural scorer requires a trained PairSeqModel")
        from .neural import predict_matrix

        values = predict_matrix(model, seq, max_block=max_block)
    return check_similarity_matrix(values, normalized=True)


def fuse(matrices: list[np.ndarray], weights: list[float]) -> np.ndarray:
    """Elementwise weighted sum of similarity matrices, weights renormalized."""
    if len(matrices) < 2:
        raise ParameterError("fusion needs at least two matrices")
    if len(weights) != len(matrices):
        raise ParameterError("one weight per matrix required")
    mats = [check_similarity_matrix(m) for m in matrices]
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise ParameterError("fused matrices must share the same size")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise ParameterError("weights must be nonnegative with positive sum")
    w = w / w.sum()
    out = np.zeros_like(mats[0])
    for wi, m in zip(w, mats):
        out += wi * m
    return out
