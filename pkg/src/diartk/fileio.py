"""File formats: RTTM annotations, embedding archives, model checkpoints.

Text formats for anything a person might diff; a small versioned binary
container with a checksum for model parameters.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import Annotation, EmbeddingSequence, Segment
from .neural import PairSeqModel
from .scoring import PldaModel

MODEL_MAGIC = b"DTKM"
MODEL_VERSION = 1


class ParseError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


class CheckpointError(ValueError):
    pass


def _check_token(token: str, what: str) -> str:
    if not token or any(ch.isspace() for ch in token):
        raise ValueError(f"{what} must be nonempty without whitespace: {token!r}")
    return token


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------

def write_rttm(path, annotations: list[Annotation]) -> None:
    """Write `SPEAKER <rec> 1 <onset> <dur> <NA> <NA> <label> <NA> <NA>` lines."""
    lines = []
    for annotation in annotations:
        rec = _check_token(annotation.recording_id, "recording id")
        for seg, label in annotation.regions:
            _check_token(label, "speaker label")
            lines.append(
                f"SPEAKER {rec} 1 {seg.start:.3f} {seg.duration:.3f} "
                f"<NA> <NA> {label} <NA> <NA>")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="ascii")


def read_rttm(path) -> list[Annotation]:
    """Parse RTTM into one Annotation per recording, in order of appearance."""
    by_recording: dict[str, list[tuple[Segment, str]]] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith(";;"):
            continue
        fields = line.split()
        if len(fields) != 10:
            raise ParseError(path, line_no, f"expected 10 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise ParseError(path, line_no, f"expected SPEAKER record, got {fields[0]!r}")
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError as err:
            raise ParseError(path, line_no, f"bad onset/duration: {err}") from None
        if duration <= 0:
            raise ParseError(path, line_no, f"nonpositive duration {duration}")
        by_recording.setdefault(fields[1], []).append(
            (Segment(onset, onset + duration), fields[7]))
    return [Annotation(recording_id=rec, regions=regions)
            for rec, regions in by_recording.items()]


# ---------------------------------------------------------------------------
# Embedding archives
# ---------------------------------------------------------------------------

def write_embeddings(path, seq: EmbeddingSequence) -> None:
    """Text archive: `#EMB <rec> <dim> <n>` header then `start end v1 .. vd` rows.

    Floats are printed with shortest round-tripping representation, so reading
    back is bit-exact.
    """
    rec = _check_token(seq.recording_id, "recording id")
    lines = [f"#EMB {rec} {seq.dim} {seq.n}"]
    for seg, vec in zip(seq.segments, seq.vectors):
        values = " ".join(repr(float(v)) for v in vec)
        lines.append(f"{seg.start!r} {seg.end!r} {values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_embeddings(path) -> EmbeddingSequence:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise ParseError(path, 1, "empty embedding archive")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#EMB":
        raise ParseError(path, 1, "expected header '#EMB <recording_id> <dim> <n>'")
    try:
        dim, n = int(header[2]), int(header[3])
    except ValueError:
        raise ParseError(path, 1, f"bad dim/count in header: {lines[0]!r}") from None
    records = [line for line in lines[1:] if line.strip()]
    if len(records) != n:
        raise ParseError(path, len(lines), f"header declares {n} records, found {len(records)}")
    segments = []
    vectors = np.empty((n, dim), dtype=np.float64)
    for row, line in enumerate(records):
        fields = line.split()
        if len(fields) != 2 + dim:
            raise ParseError(path, row + 2,
                             f"expected {2 + dim} fields, got {len(fields)}")
        try:
            start, end = float(fields[0]), float(fields[1])
            vectors[row] = [float(v) for v in fields[2:]]
        except ValueError as err:
            raise ParseError(path, row + 2, f"bad float: {err}") from None
        segments.append(Segment(start, end))
    return EmbeddingSequence(recording_id=header[1], segments=segments, vectors=vectors)


def write_corpus(directory, corpus: list[tuple[EmbeddingSequence, Annotation]]) -> None:
    """Write one embedding archive per recording plus a combined reference RTTM."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for seq, _ in corpus:
        write_embeddings(directory / f"{seq.recording_id}.emb", seq)
    write_rttm(directory / "reference.rttm", [ref for _, ref in corpus])


def read_corpus(directory) -> list[tuple[EmbeddingSequence, Annotation]]:
    """Read back a corpus directory written by write_corpus."""
    directory = Path(directory)
    references = {a.recording_id: a for a in read_rttm(directory / "reference.rttm")}
    out = []
    for emb_path in sorted(directory.glob("*.emb")):
        seq = read_embeddings(emb_path)
        if seq.recording_id not in references:
            raise CheckpointError(f"no reference annotation for {seq.recording_id}")
        out.append((seq, references[seq.recording_id]))
    return out


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------

def _serialize_arrays(arrays: dict[str, np.ndarray], meta: dict, kind: str) -> bytes:
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,  # includes byte order
        })
        payload += arr.tobytes()
    header = json.dumps({"kind": kind, "arrays": entries, "meta": meta},
                        sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(bytes(payload)).digest()
    return (MODEL_MAGIC + struct.pack("<BI", MODEL_VERSION, len(header))
            + header + bytes(payload) + digest)


def save_model(path, model: PairSeqModel | PldaModel) -> None:
    """Versioned binary checkpoint; parameters round-trip bit-exactly."""
    if isinstance(model, PairSeqModel):
        meta = {
            "input_dim": model.input_dim,
            "hidden_size": model.hidden_size,
            "fc_size": model.fc_size,
            "num_layers": model.num_layers,
        }
        blob = _serialize_arrays(model.params, meta, "pairseq")
    elif isinstance(model, PldaModel):
        arrays = {
            "mean": model.mean,
            "whitening_transform": model.whitening_transform,
            "between_cov": model.between_cov,
            "within_cov": model.within_cov,
        }
        meta = {"effective_dim": model.effective_dim, "length_norm": model.length_norm}
        blob = _serialize_arrays(arrays, meta, "plda")
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(model).__name__}")
    Path(path).write_bytes(blob)


def load_model(path) -> PairSeqModel | PldaModel:
    blob = Path(path).read_bytes()
    if len(blob) < len(MODEL_MAGIC) + 5 or blob[:4] != MODEL_MAGIC:
        raise CheckpointError(f"{path}: not a diartk model checkpoint")
    version, header_len = struct.unpack("<BI", blob[4:9])
    if version != MODEL_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_end = 9 + header_len
    if len(blob) < header_end + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    header = json.loads(blob[9:header_end].decode("utf-8"))
    payload = blob[header_end:-32]
    if hashlib.sha256(payload).digest() != blob[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch, file corrupt or truncated")

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: payload shorter than declared arrays")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(
            entry["shape"]).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")

    meta = header["meta"]
    if header["kind"] == "pairseq":
        return PairSeqModel(
            input_dim=meta["input_dim"],
            hidden_size=meta["hidden_size"],
            fc_size=meta["fc_size"],
            params=arrays,
            num_layers=meta["num_layers"],
        )
    if header["kind"] == "plda":
        return PldaModel(
            mean=arrays["mean"],
            whitening_transform=arrays["whitening_transform"],
            between_cov=arrays["between_cov"],
            within_cov=arrays["within_cov"],
            effective_dim=meta["effective_dim"],
            length_norm=meta["length_norm"],
        )
    raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
