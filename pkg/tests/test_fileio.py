import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from diartk.core import Annotation, EmbeddingSequence, Segment
from diartk.fileio import (
    CheckpointError,
    ParseError,
    load_model,
    read_corpus,
    read_embeddings,
    read_rttm,
    save_model,
    write_corpus,
    write_embeddings,
    write_rttm,
)
from diartk.neural import build_pair_batch, forward, init_model
from diartk.scoring import plda_fit


class TestRttm:
    def test_format_instantiation(self, tmp_path):
        path = tmp_path / "a.rttm"
        write_rttm(path, [Annotation("rec1", [(Segment(0, 5.0), "A")])])
        assert path.read_text().splitlines() == [
            "SPEAKER rec1 1 0.000 5.000 <NA> <NA> A <NA> <NA>"]

    def test_round_trip_to_millisecond(self, tmp_path):
        path = tmp_path / "a.rttm"
        original = [
            Annotation("r1", [(Segment(0.1234, 5.678), "A"),
                              (Segment(5.678, 9.0), "B")]),
            Annotation("r2", [(Segment(2.5, 3.75), "C")]),
        ]
        write_rttm(path, original)
        loaded = read_rttm(path)
        assert [a.recording_id for a in loaded] == ["r1", "r2"]
        for orig, got in zip(original, loaded):
            for (s0, l0), (s1, l1) in zip(orig.regions, got.regions):
                assert l0 == l1
                assert s1.start == pytest.approx(s0.start, abs=1e-3)
                assert s1.end == pytest.approx(s0.end, abs=1e-3)

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.rttm"
        path.write_text("SPEAKER rec1 1 0.000 5.000 <NA> <NA> A <NA>\n")
        with pytest.raises(ParseError, match="bad.rttm:1"):
            read_rttm(path)

    def test_tolerates_extra_whitespace(self, tmp_path):
        path = tmp_path / "ws.rttm"
        path.write_text("  SPEAKER   rec1  1   0.500    2.000 <NA> <NA>  A <NA> <NA> \n")
        got = read_rttm(path)
        assert got[0].regions[0][0].start == pytest.approx(0.5)

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "c.rttm"
        path.write_text(";; comment\nSPEAKER r 1 0.000 1.000 <NA> <NA> A <NA> <NA>\n")
        assert len(read_rttm(path)) == 1


class TestEmbeddings:
    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "a.emb"
        seq = EmbeddingSequence(
            "rec", [Segment(0, 1.5)], np.array([[0.1, -2.5e-7]]))
        write_embeddings(path, seq)
        got = read_embeddings(path)
        assert got.recording_id == "rec"
        assert np.array_equal(got.vectors, seq.vectors)
        assert got.segments == seq.segments

    def test_tiny_values_survive_bit_exact(self, tmp_path):
        path = tmp_path / "tiny.emb"
        seq = EmbeddingSequence(
            "rec", [Segment(0, 1.5)], np.array([[1e-30, -1e-308]]))
        write_embeddings(path, seq)
        assert np.array_equal(read_embeddings(path).vectors, seq.vectors)

    def test_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_text("#EMB rec 2 3\n0.0 1.5 1.0 2.0\n1.5 3.0 3.0 4.0\n")
        with pytest.raises(ParseError, match="declares 3"):
            read_embeddings(path)

    def test_dim_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.emb"
        path.write_text("#EMB rec 2 1\n0.0 1.5 1.0\n")
        with pytest.raises(ParseError, match="expected 4 fields"):
            read_embeddings(path)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40,
              suppress_health_check=[HealthCheck.function_scoped_fixture])
    def test_random_round_trips(self, tmp_path, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 8))
        d = int(rng.integers(1, 6))
        starts = np.cumsum(rng.uniform(0.1, 2.0, n))
        seq = EmbeddingSequence(
            f"rec{seed}",
            [Segment(float(s), float(s + rng.uniform(0.2, 3.0))) for s in starts],
            rng.normal(scale=10.0 ** rng.integers(-12, 12), size=(n, d)))
        path = tmp_path / "x.emb"
        write_embeddings(path, seq)
        got = read_embeddings(path)
        assert np.array_equal(got.vectors, seq.vectors)
        assert all(abs(a.start - b.start) == 0 and abs(a.end - b.end) == 0
                   for a, b in zip(got.segments, seq.segments))


class TestCorpusDir:
    def test_round_trip(self, tmp_path, rng):
        corpus = []
        for i in range(3):
            n = 4
            segs = [Segment(j * 0.75, j * 0.75 + 1.5) for j in range(n)]
            seq = EmbeddingSequence(f"rec{i}", segs, rng.normal(size=(n, 3)))
            ref = Annotation(f"rec{i}", [(Segment(0, 3.75), f"s{i}")])
            corpus.append((seq, ref))
        write_corpus(tmp_path / "corpus", corpus)
        got = read_corpus(tmp_path / "corpus")
        assert [s.recording_id for s, _ in got] == ["rec0", "rec1", "rec2"]
        assert np.array_equal(got[1][0].vectors, corpus[1][0].vectors)


class TestModelCheckpoints:
    def test_pairseq_round_trip_bitwise(self, tmp_path, rng):
        model = init_model(4, hidden_size=3, fc_size=4, seed=9)
        path = tmp_path / "m.ckpt"
        save_model(path, model)
        loaded = load_model(path)
        for name in model.params:
            assert np.array_equal(model.params[name], loaded.params[name])
        seq = EmbeddingSequence(
            "r", [Segment(i * 0.75, i * 0.75 + 1.5) for i in range(3)],
            rng.normal(size=(3, 2)))
        batch = build_pair_batch(seq)
        assert np.array_equal(forward(model, batch), forward(loaded, batch))

    def test_plda_round_trip(self, tmp_path, rng):
        train = [(rng.normal(size=3) + 3 * rng.normal(size=3), f"s{i % 3}")
                 for i in range(24)]
        model = plda_fit(train)
        path = tmp_path / "plda.ckpt"
        save_model(path, model)
        loaded = load_model(path)
        assert np.array_equal(model.mean, loaded.mean)
        assert np.array_equal(model.whitening_transform, loaded.whitening_transform)
        assert np.array_equal(model.between_cov, loaded.between_cov)
        assert np.array_equal(model.within_cov, loaded.within_cov)
        assert loaded.effective_dim == model.effective_dim

    def test_truncated_file_detected(self, tmp_path):
        model = init_model(4, hidden_size=3, fc_size=4, seed=1)
        path = tmp_path / "m.ckpt"
        save_model(path, model)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(CheckpointError):
            load_model(path)

    def test_corrupted_payload_detected(self, tmp_path):
        model = init_model(4, hidden_size=3, fc_size=4, seed=1)
        path = tmp_path / "m.ckpt"
        save_model(path, model)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="checksum|version|truncated"):
            load_model(path)

    def test_unknown_version_rejected(self, tmp_path):
        model = init_model(4, hidden_size=3, fc_size=4, seed=1)
        path = tmp_path / "m.ckpt"
        save_model(path, model)
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # version byte
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version 99"):
            load_model(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="not a diartk"):
            load_model(path)

    def test_float32_models_preserved(self, tmp_path):
        model = init_model(4, hidden_size=3, fc_size=4, seed=2, dtype="float32")
        path = tmp_path / "m32.ckpt"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.dtype == np.float32
        for name in model.params:
            assert model.params[name].tobytes() == loaded.params[name].tobytes()
