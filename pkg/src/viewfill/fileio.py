"""Binary embedding and score file formats.

Both formats are little-endian. Embedding file ("MVEB"):

    magic 4s | version u16 | dim u32 | view-count u16 | class-count u16
    | record-count u64, then per record: id-length u16 | id (UTF-8)
    | label u16 | view u16 | dim * f32

Score file ("MVSC"):

    magic 4s | version u16 | class-count u16 | record-count u64, then per
    record: id-length u16 | id (UTF-8) | label u16 (0xFFFF = unknown)
    | class-count * f32

Reading performs full validation: a file that reads back cleanly conforms
to the format and every type invariant.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import (
    UNKNOWN_LABEL,
    DimensionMismatch,
    EmbeddingRecord,
    EmbeddingSet,
    FormatError,
    ScoreSet,
    ScoreVector,
)

MAGIC_EMBEDDING = b"MVEB"
MAGIC_SCORE = b"MVSC"
FORMAT_VERSION = 1

_U16_MAX = 0xFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash, used to fingerprint checkpoint bytes."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class ByteReader:
    """Cursor over a byte buffer that reports offsets in its errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"truncated file: needed {n} bytes for {what}, "
                f"{len(self.data) - self.offset} left",
                offset=self.offset,
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))

    def u16(self, what: str) -> int:
        return self.unpack("<H", what)[0]

    def u32(self, what: str) -> int:
        return self.unpack("<I", what)[0]

    def u64(self, what: str) -> int:
        return self.unpack("<Q", what)[0]

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected), "magic")
        if got != expected:
            raise FormatError(
                f"bad magic {got!r}, expected {expected!r}", offset=0
            )

    def utf8(self, length: int, what: str) -> str:
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what}: {exc}", offset=self.offset - length)

    def f32_vector(self, count: int, what: str) -> np.ndarray:
        start = self.offset
        available = (len(self.data) - self.offset) // 4
        if available < count:
            raise DimensionMismatch(
                f"{what}: expected {count} float32 entries, only {available} "
                f"remain (byte offset {start})"
            )
        raw = self.take(count * 4, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)

    def expect_eof(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{len(self.data) - self.offset} trailing bytes after last record",
                offset=self.offset,
            )


def _check_u16(value: int, what: str) -> int:
    if not (0 <= value <= _U16_MAX):
        raise ValueError(f"{what} {value} does not fit in u16")
    return value


def _encode_id(record_id: str) -> bytes:
    raw = record_id.encode("utf-8")
    if len(raw) > _U16_MAX:
        raise ValueError(f"id longer than {_U16_MAX} bytes: {record_id[:40]!r}...")
    return raw


def write_embedding_file(embeddings: EmbeddingSet, path: Union[str, Path]) -> None:
    """Serialize an embedding set; vectors are stored as float32."""
    _check_u16(embeddings.n_views, "view count")
    _check_u16(embeddings.n_classes, "class count")
    parts = [
        MAGIC_EMBEDDING,
        struct.pack(
            "<HIHHQ",
            FORMAT_VERSION,
            embeddings.dim,
            embeddings.n_views,
            embeddings.n_classes,
            len(embeddings.records),
        ),
    ]
    for rec in embeddings.records:
        raw_id = _encode_id(rec.id)
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(struct.pack("<HH", rec.label, rec.view))
        parts.append(np.asarray(rec.vector, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_embedding_file(path: Union[str, Path]) -> EmbeddingSet:
    """Parse and validate an embedding file."""
    reader = ByteReader(Path(path).read_bytes())
    reader.magic(MAGIC_EMBEDDING)
    version = reader.u16("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported embedding format version {version}", offset=4)
    dim = reader.u32("dim")
    n_views = reader.u16("view count")
    n_classes = reader.u16("class count")
    count = reader.u64("record count")
    if dim == 0:
        raise FormatError("declared dim is 0", offset=6)
    records = []
    for i in range(count):
        rec_off = reader.offset
        id_len = reader.u16(f"record {i} id length")
        rec_id = reader.utf8(id_len, f"record {i} id")
        label, view = reader.unpack("<HH", f"record {i} label/view")
        if label >= n_classes:
            raise FormatError(
                f"record {i} ({rec_id!r}) has label {label} >= class count {n_classes}",
                offset=rec_off,
            )
        if view >= n_views:
            raise FormatError(
                f"record {i} ({rec_id!r}) has view {view} >= view count {n_views}",
                offset=rec_off,
            )
        vector = reader.f32_vector(dim, f"record {i} ({rec_id!r}) vector")
        records.append(EmbeddingRecord(rec_id, label, view, vector))
    reader.expect_eof()
    return EmbeddingSet(dim, n_views, n_classes, tuple(records))


def write_score_file(scores: ScoreSet, path: Union[str, Path]) -> None:
    """Serialize a score set; probabilities are stored as float32."""
    _check_u16(scores.n_classes, "class count")
    if scores.n_classes == UNKNOWN_LABEL:
        raise ValueError(f"class count {UNKNOWN_LABEL} collides with the unknown-label sentinel")
    parts = [
        MAGIC_SCORE,
        struct.pack("<HHQ", FORMAT_VERSION, scores.n_classes, len(scores.records)),
    ]
    for rec in scores.records:
        raw_id = _encode_id(rec.id)
        label = UNKNOWN_LABEL if rec.label is None else rec.label
        parts.append(struct.pack("<H", len(raw_id)))
        parts.append(raw_id)
        parts.append(struct.pack("<H", label))
        parts.append(np.asarray(rec.probs, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_score_file(path: Union[str, Path]) -> ScoreSet:
    """Parse and validate a score file."""
    reader = ByteReader(Path(path).read_bytes())
    reader.magic(MAGIC_SCORE)
    version = reader.u16("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported score format version {version}", offset=4)
    n_classes = reader.u16("class count")
    count = reader.u64("record count")
    if n_classes < 2:
        raise FormatError(f"declared class count {n_classes} < 2", offset=6)
    records = []
    for i in range(count):
        rec_off = reader.offset
        id_len = reader.u16(f"record {i} id length")
        rec_id = reader.utf8(id_len, f"record {i} id")
        raw_label = reader.u16(f"record {i} label")
        label = None if raw_label == UNKNOWN_LABEL else raw_label
        if label is not None and label >= n_classes:
            raise FormatError(
                f"record {i} ({rec_id!r}) has label {label} >= class count {n_classes}",
                offset=rec_off,
            )
        probs = reader.f32_vector(n_classes, f"record {i} ({rec_id!r}) probabilities")
        try:
            records.append(ScoreVector(rec_id, probs, label))
        except ValueError as exc:
            raise FormatError(f"record {i}: {exc}", offset=rec_off)
    reader.expect_eof()
    return ScoreSet(n_classes, tuple(records))


def validate_file(path: Union[str, Path]) -> str:
    """Validate any known file by reading it fully; returns a summary line.

    Raises FormatError / DimensionMismatch on any violation, exactly as the
    corresponding reader would.
    """
    head = Path(path).read_bytes()[:4]
    if head == MAGIC_EMBEDDING:
        emb = read_embedding_file(path)
        return (
            f"embedding file: {len(emb)} records, dim {emb.dim}, "
            f"{emb.n_views} views, {emb.n_classes} classes"
        )
    if head == MAGIC_SCORE:
        scores = read_score_file(path)
        return f"score file: {len(scores)} records, {scores.n_classes} classes"
    raise FormatError(f"unknown magic {head!r}", offset=0)
