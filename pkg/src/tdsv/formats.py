"""Readers and writers for the toolkit's on-disk formats.

Text formats are UTF-8 TSV with LF endings and fixed 6-decimal floats so
identical inputs always serialize to identical bytes. The binary embedding
format stores IEEE-754 little-endian float32 vectors for compact cohorts.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import (
    ChannelSpec,
    ConfigError,
    DataError,
    EmbeddingSet,
    FormatError,
    GENDERS,
    LABELS,
    LANGUAGES,
    N_PHRASES,
    PHRASE_BY_ID,
    ScoreRecord,
    Trial,
)

EMB_MAGIC = b"TDSVEMB1"
EMB_TSV_TAG = "#EMB"
EMB_TSV_VERSION = "v1"
ABSENT = "-"


def fmt_float(x: float) -> str:
    """Fixed 6-decimal rendering (round-half-even, as Python formatting does)."""
    return format(float(x), ".6f")


def _open_lines(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\n").rstrip("\r")


def _parse_float(token: str, path, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: not a number: {token!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}:{lineno}: non-finite value {token!r}")
    return value


def _parse_int(token: str, path, lineno: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"{path}:{lineno}: not an integer: {token!r}") from None


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def _bad_format(fmt) -> ConfigError:
    return ConfigError(f"unknown embedding format {fmt!r} (expected 'tsv' or 'binary')")


def write_embeddings(embeddings: EmbeddingSet, path, fmt: str = "tsv") -> None:
    """Write an embedding set as TSV or binary; byte output is deterministic."""
    if fmt == "tsv":
        _write_embeddings_tsv(embeddings, path)
    elif fmt == "binary":
        _write_embeddings_binary(embeddings, path)
    else:
        raise _bad_format(fmt)


def _write_embeddings_tsv(embeddings: EmbeddingSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{EMB_TSV_TAG}\t{EMB_TSV_VERSION}\t{embeddings.channel}\t{embeddings.dim}\n")
        for emb in embeddings:
            values = " ".join(fmt_float(v) for v in emb.vector)
            fh.write(f"{emb.utterance_id}\t{emb.dim}\t{values}\n")


def _write_embeddings_binary(embeddings: EmbeddingSet, path) -> None:
    name = embeddings.channel.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<II", embeddings.dim, len(embeddings)))
        for emb in embeddings:
            uid = emb.utterance_id.encode("utf-8")
            fh.write(struct.pack("<H", len(uid)))
            fh.write(uid)
            fh.write(emb.vector.astype("<f4").tobytes())


def read_embeddings(path, fmt: str | None = None,
                    channels: Sequence[ChannelSpec] | None = None) -> EmbeddingSet:
    """Read an embedding file; `fmt` None auto-detects from the leading bytes.

    If a channel registry is given, the file's channel must either be absent
    from it or carry the registered dimension.
    """
    path = Path(path)
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "binary" if fh.read(len(EMB_MAGIC)) == EMB_MAGIC else "tsv"
    if fmt == "binary":
        es = _read_embeddings_binary(path)
    elif fmt == "tsv":
        es = _read_embeddings_tsv(path)
    else:
        raise _bad_format(fmt)
    if channels is not None:
        for spec in channels:
            if spec.name == es.channel and spec.dim != es.dim:
                raise FormatError(
                    f"{path}: channel {es.channel!r} has dim {es.dim}, "
                    f"registry says {spec.dim}"
                )
    return es


def _read_embeddings_tsv(path) -> EmbeddingSet:
    lines = _open_lines(path)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FormatError(f"{path}: empty file, expected {EMB_TSV_TAG} header") from None
    cols = header.split("\t")
    if len(cols) != 4 or cols[0] != EMB_TSV_TAG or cols[1] != EMB_TSV_VERSION:
        raise FormatError(f"{path}:1: bad header {header!r}")
    channel = cols[2]
    dim = _parse_int(cols[3], path, 1)
    if dim <= 0:
        raise FormatError(f"{path}:1: non-positive dim {dim}")
    es = EmbeddingSet(channel, dim)
    for lineno, line in lines:
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        uid = cols[0]
        row_dim = _parse_int(cols[1], path, lineno)
        if row_dim != dim:
            raise FormatError(f"{path}:{lineno}: dim {row_dim} != header dim {dim}")
        tokens = cols[2].split(" ")
        if len(tokens) != dim:
            raise FormatError(
                f"{path}:{lineno}: {len(tokens)} values for declared dim {dim}"
            )
        vec = np.array([_parse_float(t, path, lineno) for t in tokens], dtype=np.float64)
        try:
            es.add(uid, vec)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return es


def _read_embeddings_binary(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(EMB_MAGIC)] != EMB_MAGIC:
        raise FormatError(f"{path}: bad magic, not an embedding file")
    off = len(EMB_MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        chunk = data[off : off + n]
        if len(chunk) != n:
            raise FormatError(f"{path}: truncated at byte {off}")
        off += n
        return chunk

    (name_len,) = struct.unpack("<H", take(2))
    channel = take(name_len).decode("utf-8")
    dim, count = struct.unpack("<II", take(8))
    if dim == 0:
        raise FormatError(f"{path}: zero dim")
    es = EmbeddingSet(channel, dim)
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        uid = take(id_len).decode("utf-8")
        vec = np.frombuffer(take(4 * dim), dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: non-finite value in record {uid!r}")
        es.add(uid, vec)
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return es


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def write_trials(trials: Iterable[Trial], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trials:
            fh.write(
                "\t".join(
                    (
                        t.model_id,
                        t.test_utterance_id,
                        t.label or ABSENT,
                        t.gender or ABSENT,
                        t.language or ABSENT,
                    )
                )
                + "\n"
            )


def read_trials(path) -> list[Trial]:
    trials = []
    for lineno, line in _open_lines(path):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        model_id, test_id, label, gender, language = cols
        if label != ABSENT and label not in LABELS:
            raise FormatError(f"{path}:{lineno}: unknown label {label!r}")
        if gender != ABSENT and gender not in GENDERS:
            raise FormatError(f"{path}:{lineno}: unknown gender {gender!r}")
        if language != ABSENT and language not in LANGUAGES:
            raise FormatError(f"{path}:{lineno}: unknown language {language!r}")
        try:
            trials.append(
                Trial(
                    model_id,
                    test_id,
                    label if label != ABSENT else None,
                    gender if gender != ABSENT else None,
                    language if language != ABSENT else None,
                )
            )
        except DataError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    return trials


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def write_scores(records: Sequence[ScoreRecord], path) -> None:
    """Write score records in input order: ids, per-channel raw/norm/cal, fused, phrase, final."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fields = [r.model_id, r.test_utterance_id]
            fields += [fmt_float(v) for v in r.raw]
            fields += [fmt_float(v) for v in r.normalized]
            fields += [fmt_float(v) for v in r.calibrated]
            fields += [fmt_float(r.fused), fmt_float(r.phrase_posterior), fmt_float(r.final)]
            fh.write("\t".join(fields) + "\n")


def read_scores(path, n_channels: int) -> list[ScoreRecord]:
    expected = 2 + 3 * n_channels + 3
    records = []
    for lineno, line in _open_lines(path):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != expected:
            raise FormatError(
                f"{path}:{lineno}: expected {expected} columns for "
                f"{n_channels} channels, got {len(cols)}"
            )
        vals = [_parse_float(t, path, lineno) for t in cols[2:]]
        n = n_channels
        rec = ScoreRecord(
            model_id=cols[0],
            test_utterance_id=cols[1],
            raw=tuple(vals[0:n]),
            normalized=tuple(vals[n : 2 * n]),
            calibrated=tuple(vals[2 * n : 3 * n]),
            fused=vals[3 * n],
            phrase_posterior=vals[3 * n + 1],
            final=vals[3 * n + 2],
        )
        # 6-decimal serialization breaks the exact product identity; check ranges only.
        rec.validate(check_product=False)
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# Phrase posteriors
# ---------------------------------------------------------------------------

def write_posteriors(posteriors: Mapping[str, np.ndarray], path) -> None:
    """Write rows sorted by utterance id; rounded rows are rebalanced so the
    serialized 6-decimal values still sum to 1 within 1e-6."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid in sorted(posteriors):
            row = np.asarray(posteriors[uid], dtype=np.float64)
            if row.shape != (N_PHRASES,):
                raise DataError(f"posterior row for {uid!r} must have {N_PHRASES} entries")
            micros = [int(round(v * 1e6)) for v in row]
            micros[int(np.argmax(row))] += 10**6 - sum(micros)
            fh.write(uid + "\t" + "\t".join(f"{m / 1e6:.6f}" for m in micros) + "\n")


def read_posteriors(path) -> dict[str, np.ndarray]:
    posteriors: dict[str, np.ndarray] = {}
    for lineno, line in _open_lines(path):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 1 + N_PHRASES:
            raise FormatError(
                f"{path}:{lineno}: expected {1 + N_PHRASES} columns, got {len(cols)}"
            )
        uid = cols[0]
        if uid in posteriors:
            raise DataError(f"{path}:{lineno}: duplicate posterior row for {uid!r}")
        row = np.array([_parse_float(t, path, lineno) for t in cols[1:]], dtype=np.float64)
        if np.any(row < 0.0) or np.any(row > 1.0):
            raise DataError(f"{path}:{lineno}: posterior outside [0, 1]")
        if abs(float(row.sum()) - 1.0) > 1e-6:
            raise DataError(f"{path}:{lineno}: posteriors sum to {row.sum()}, not 1")
        posteriors[uid] = row
    return posteriors


# ---------------------------------------------------------------------------
# Enrollment table and ground truth
# ---------------------------------------------------------------------------

def write_models_table(models: Sequence[tuple[str, int, tuple[str, str, str]]], path) -> None:
    """Rows of (model_id, phrase_id, three enrollment utterance ids)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for model_id, phrase_id, utts in models:
            fh.write("\t".join((model_id, str(phrase_id), *utts)) + "\n")


def read_models_table(path) -> list[tuple[str, int, tuple[str, str, str]]]:
    rows = []
    seen = set()
    for lineno, line in _open_lines(path):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 columns, got {len(cols)}")
        model_id = cols[0]
        phrase_id = _parse_int(cols[1], path, lineno)
        if phrase_id not in PHRASE_BY_ID:
            raise DataError(f"{path}:{lineno}: unknown phrase id {phrase_id}")
        if model_id in seen:
            raise DataError(f"{path}:{lineno}: duplicate model id {model_id!r}")
        seen.add(model_id)
        rows.append((model_id, phrase_id, (cols[2], cols[3], cols[4])))
    return rows


def write_ground_truth(rows: Sequence[tuple[str, str, int]], path) -> None:
    """Rows of (utterance_id, speaker_id, phrase_id)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, spk, phrase_id in rows:
            fh.write(f"{uid}\t{spk}\t{phrase_id}\n")


def read_ground_truth(path) -> list[tuple[str, str, int]]:
    rows = []
    for lineno, line in _open_lines(path):
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(cols)}")
        rows.append((cols[0], cols[1], _parse_int(cols[2], path, lineno)))
    return rows
