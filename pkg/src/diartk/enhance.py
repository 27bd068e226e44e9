"""Similarity-matrix smoothing applied between scoring and clustering.

Three steps, run exactly once: symmetrize by elementwise max, diffuse by
right-multiplying with the transpose, then divide each row by its max.
No blurring or thresholding happens here.
"""

from __future__ import annotations

import logging

import numpy as np

from .core import ParameterError, check_similarity_matrix

logger = logging.getLogger(__name__)


def enhance(values: np.ndarray) -> np.ndarray:
    """Symmetrize, diffuse, and row-max normalize a nonnegative matrix.

    Every row of the output contains a 1.0 unless it was all zeros after
    diffusion, in which case it is passed through as zeros and logged.
    """
    y = check_similarity_matrix(values)
    if y.min() < 0:
        raise ParameterError("enhancement requires nonnegative entries")
    y = np.maximum(y, y.T)
    y = y @ y.T
    row_max = y.max(axis=1)
    zero_rows = row_max <= 0.0
    if np.any(zero_rows):
        logger.warning("enhance: %d all-zero rows left untouched", int(zero_rows.sum()))
        row_max = np.where(zero_rows, 1.0, row_max)
    return y / row_max[:, None]
