import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from diartk.core import EmbeddingSequence, ParameterError, Segment
from diartk.scoring import (
    PldaModel,
    TrainingError,
    cosine_score,
    estimate_two_covariance,
    fuse,
    logistic_normalize,
    plda_fit,
    plda_score,
    similarity_matrix,
)


def make_seq(vectors, rec="r"):
    vectors = np.asarray(vectors, dtype=float)
    segments = [Segment(i * 0.75, i * 0.75 + 1.5) for i in range(len(vectors))]
    return EmbeddingSequence(rec, segments, vectors)


class TestLogistic:
    def test_symmetry_point(self):
        assert logistic_normalize(0.0) == pytest.approx(0.5)

    def test_value_at_one(self):
        # 1 / (1 + e^-5) evaluated independently
        assert logistic_normalize(1.0) == pytest.approx(0.993307, abs=1e-6)

    @given(st.floats(-50, 50))
    def test_mirror_outputs_sum_to_one(self, x):
        assert logistic_normalize(x) + logistic_normalize(-x) == pytest.approx(1.0)

    @given(st.floats(-6, 6), st.floats(-6, 6))
    def test_strictly_increasing(self, x, y):
        # Strictness is testable away from float saturation and for gaps the
        # mantissa can resolve.
        if x < y and y - x > 1e-9:
            assert logistic_normalize(x) < logistic_normalize(y)

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    def test_monotone_globally(self, x, y):
        if x <= y:
            assert logistic_normalize(x) <= logistic_normalize(y)


class TestCosine:
    def test_identical(self):
        v = np.array([0.3, -1.2, 4.0])
        assert cosine_score(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_score([1, 0], [0, 1]) == pytest.approx(0.5)

    def test_opposite(self):
        v = np.array([2.0, -1.0])
        assert cosine_score(v, -v) == pytest.approx(0.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ParameterError):
            cosine_score([0.0, 0.0], [1.0, 0.0])

    @given(st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_invariant(self, a, b):
        u = np.array([1.0, 2.0, -0.5])
        v = np.array([-0.3, 1.0, 0.8])
        assert cosine_score(a * u, b * v) == pytest.approx(cosine_score(u, v))

    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=(2, 5))
        assert cosine_score(u, v) == pytest.approx(cosine_score(v, u), abs=1e-12)


class TestPldaFit:
    def test_point_mass_speakers(self):
        train = [(np.array([1.0, 0.0]), "a")] * 5 + [(np.array([0.0, 1.0]), "b")] * 5
        model = plda_fit(train)
        # No within-speaker scatter beyond the ridge.
        assert np.allclose(model.within_cov, 1e-6 * np.eye(model.effective_dim))
        assert np.linalg.norm(model.between_cov) > 0.1

    def test_all_vectors_equal_is_degenerate(self):
        train = [(np.ones(3), "a")] * 3 + [(np.ones(3), "b")] * 3
        with pytest.raises(TrainingError):
            plda_fit(train)

    def test_fewer_than_two_speakers(self):
        with pytest.raises(TrainingError):
            plda_fit([(np.array([1.0, 2.0]), "a"), (np.array([2.0, 1.0]), "a")])

    def test_rank_deficient_data_reduces_dim(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=(40, 2))
        lift = np.zeros((40, 5))
        lift[:, :2] = base  # rank-2 data in 5 dims
        train = [(lift[i], f"s{i % 4}") for i in range(40)]
        model = plda_fit(train)
        assert model.effective_dim == 2

    def test_two_cov_estimates_converge(self):
        # Known diagonal covariances, 200 samples per speaker: the closed-form
        # scatter estimates land within 10% relative error of the truth.
        rng = np.random.default_rng(7)
        d = 4
        between = np.diag([2.0, 1.0, 0.5, 0.25])
        within = np.diag([0.4, 0.3, 0.6, 0.2])
        speakers = 400  # the between-covariance needs many classes to settle
        vectors, labels = [], []
        for s in range(speakers):
            mean = rng.multivariate_normal(np.zeros(d), between)
            samples = rng.multivariate_normal(mean, within, size=200)
            vectors.append(samples)
            labels += [f"s{s}"] * 200
        got_b, got_w = estimate_two_covariance(np.vstack(vectors), labels)
        assert np.linalg.norm(got_b - between) / np.linalg.norm(between) < 0.10
        assert np.linalg.norm(got_w - within) / np.linalg.norm(within) < 0.10


def isotropic_model(d=1):
    return PldaModel(
        mean=np.zeros(d),
        whitening_transform=np.eye(d),
        between_cov=np.eye(d),
        within_cov=np.eye(d),
        effective_dim=d,
        length_norm=False,
    )


class TestPldaScore:
    def test_isotropic_hand_case_matches_gaussian_oracle(self):
        # d=1, B=W=1: compare against scipy's multivariate normal densities on
        # the stacked pair under both hypotheses.
        model = isotropic_model()
        same_cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        diff_cov = np.array([[2.0, 0.0], [0.0, 2.0]])

        def oracle(xi, xj):
            z = np.array([xi, xj])
            return (multivariate_normal.logpdf(z, mean=[0, 0], cov=same_cov)
                    - multivariate_normal.logpdf(z, mean=[0, 0], cov=diff_cov))

        for xi, xj in [(0.0, 0.0), (0.0, 3.0), (1.0, 1.0), (-2.0, 0.5)]:
            got = plda_score(model, np.array([xi]), np.array([xj]))
            assert got == pytest.approx(oracle(xi, xj), abs=1e-10)

    def test_same_beats_far_pair(self):
        model = isotropic_model()
        assert plda_score(model, np.array([0.0]), np.array([0.0])) > \
            plda_score(model, np.array([0.0]), np.array([3.0]))

    def test_symmetric(self, rng):
        train = [(rng.normal(size=4) + 3 * rng.normal(size=4), f"s{i % 3}")
                 for i in range(30)]
        model = plda_fit(train)
        for _ in range(10):
            u, v = rng.normal(size=(2, 4))
            assert plda_score(model, u, v) == pytest.approx(
                plda_score(model, v, u), abs=1e-9)

    def test_dimension_mismatch(self):
        model = isotropic_model(d=2)
        with pytest.raises(ParameterError):
            plda_score(model, np.zeros(3), np.zeros(3))

    def test_global_shift_invariance(self, rng):
        speakers = {f"s{k}": rng.normal(scale=3.0, size=4) for k in range(4)}
        train = [(speakers[f"s{i % 4}"] + rng.normal(scale=0.5, size=4), f"s{i % 4}")
                 for i in range(80)]
        shift = np.array([5.0, -2.0, 1.0, 0.25])
        shifted = [(v + shift, s) for v, s in train]
        m0 = plda_fit(train)
        m1 = plda_fit(shifted)
        for _ in range(5):
            u, v = rng.normal(size=(2, 4))
            assert plda_score(m0, u, v) == pytest.approx(
                plda_score(m1, u + shift, v + shift), abs=1e-6)


class TestSimilarityMatrix:
    def test_single_segment_cosine(self):
        got = similarity_matrix(make_seq([[1.0, 2.0]]), "cosine")
        assert np.allclose(got, [[1.0]])

    def test_cosine_orthogonality_cases(self):
        got = similarity_matrix(make_seq([[1, 0], [0, 1], [1, 0]]), "cosine")
        assert np.allclose(got, [[1, 0.5, 1], [0.5, 1, 0.5], [1, 0.5, 1]])

    def test_plda_outputs_in_unit_interval(self, rng):
        train = [(rng.normal(size=3) + 4 * rng.normal(size=3), f"s{i % 3}")
                 for i in range(30)]
        model = plda_fit(train)
        got = similarity_matrix(make_seq(rng.normal(size=(6, 3))), "plda", model=model)
        assert np.all(got > 0) and np.all(got < 1)

    def test_model_required(self, rng):
        with pytest.raises(ParameterError):
            similarity_matrix(make_seq(rng.normal(size=(3, 2))), "plda")
        with pytest.raises(ParameterError):
            similarity_matrix(make_seq(rng.normal(size=(3, 2))), "neural")

    def test_scorers_symmetric(self, rng):
        train = [(rng.normal(size=3) + 4 * rng.normal(size=3), f"s{i % 3}")
                 for i in range(30)]
        model = plda_fit(train)
        seq = make_seq(rng.normal(size=(8, 3)))
        for scorer, m in (("cosine", None), ("plda", model)):
            got = similarity_matrix(seq, scorer, model=m)
            assert np.max(np.abs(got - got.T)) < 1e-9

    def test_within_speaker_scores_higher(self, rng):
        # Two far-apart speakers: mean within-speaker similarity must beat the
        # cross-speaker mean for both baseline scorers.
        a = rng.normal(size=(10, 4)) * 0.1 + np.array([10, 0, 0, 0])
        b = rng.normal(size=(10, 4)) * 0.1 + np.array([0, 10, 0, 0])
        seq = make_seq(np.vstack([a, b]))
        train = [(v + rng.normal(scale=0.1, size=4), f"s{i // 10}")
                 for i, v in enumerate(np.vstack([a, b]))]
        model = plda_fit(train)
        same = np.zeros((20, 20), dtype=bool)
        same[:10, :10] = same[10:, 10:] = True
        np.fill_diagonal(same, False)
        for scorer, m in (("cosine", None), ("plda", model)):
            got = similarity_matrix(seq, scorer, model=m)
            assert got[same].mean() > got[~same & ~np.eye(20, dtype=bool)].mean()


class TestFuse:
    def test_idempotent_on_equal_matrices(self):
        a = np.array([[1.0, 0.3], [0.3, 1.0]])
        assert np.allclose(fuse([a, a], [0.5, 0.5]), a)

    def test_degenerate_weight(self):
        a = np.array([[1.0, 0.2], [0.2, 1.0]])
        b = np.array([[1.0, 0.9], [0.9, 1.0]])
        assert np.allclose(fuse([a, b], [1.0, 0.0]), a)

    def test_arithmetic(self):
        a = np.eye(2)
        b = np.ones((2, 2))
        assert np.allclose(fuse([a, b], [0.5, 0.5]), [[1, 0.5], [0.5, 1]])

    def test_weights_renormalized(self):
        a = np.eye(2)
        b = np.ones((2, 2))
        assert np.allclose(fuse([a, b], [2.0, 2.0]), fuse([a, b], [0.5, 0.5]))

    def test_size_mismatch(self):
        with pytest.raises(ParameterError):
            fuse([np.eye(2), np.eye(3)], [0.5, 0.5])

    def test_needs_two(self):
        with pytest.raises(ParameterError):
            fuse([np.eye(2)], [1.0])

    @given(st.integers(0, 1000))
    def test_unit_interval_preserved(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.random((2, 4, 4))
        w = rng.random(2) + 0.01
        got = fuse([a, b], list(w))
        assert got.min() >= 0.0 and got.max() <= 1.0
