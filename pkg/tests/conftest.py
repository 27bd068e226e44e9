import numpy as np
import pytest


def same_partition(labels_a, labels_b) -> bool:
    """True when two labelings induce the same partition (up to renaming)."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        return False
    return bool(np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
