"""Persisted index of unit-normalized, labeled reference embeddings.

On-disk layout (little-endian), CRC32-guarded and free of timestamps so
rebuilding an identical index yields identical bytes:

    magic "RSSI" | version u16 | dim u32 | count u64
    | label table: u32 L, then L x (u32 byte-length + UTF-8 bytes)
    | per-record label ordinal: count x u32
    | vectors: count x dim float32
    | per-record source string: count x (u32 byte-length + UTF-8 bytes)
    | crc32 u32 over all preceding bytes

Vectors are stored unit-normalized in float32, so cosine similarity against
them reduces to a dot product at query time.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"RSSI"
VERSION = 1
ZERO_NORM_EPS = 1e-12


class IndexFormatError(ValueError):
    """Bad magic, unsupported version, truncation, or checksum mismatch."""


@dataclass
class ReferenceRecord:
    id: int
    label: str
    embedding: np.ndarray  # (dim,) float32, unit norm
    source: str = ""


class ReferenceIndex:
    """Append-only store; ids are insertion ordinals and never change."""

    def __init__(self, dim: int = 0):
        if dim < 0:
            raise ValueError("dim must be >= 0")
        self.dim = dim  # 0 until the first add fixes it
        self.records: list[ReferenceRecord] = []
        self._matrix: np.ndarray | None = None
        self._matrix64: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def add(self, embedding, label: str, source: str = "") -> int:
        """Normalize and append; returns the new record's id."""
        if not label:
            raise ValueError("label must be non-empty")
        vec = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if not np.isfinite(vec).all():
            raise ValueError("embedding has non-finite components")
        if self.dim == 0:
            if vec.size == 0:
                raise ValueError("embedding is empty")
            self.dim = int(vec.size)
        elif vec.size != self.dim:
            raise ValueError(f"embedding dim {vec.size} does not match index dim {self.dim}")
        norm = float(np.linalg.norm(vec))
        if norm < ZERO_NORM_EPS:
            raise ValueError("cannot index a zero vector")
        unit = (vec / norm).astype(np.float32)
        record = ReferenceRecord(id=len(self.records), label=label, embedding=unit, source=source)
        self.records.append(record)
        self._matrix = None
        self._matrix64 = None
        return record.id

    @property
    def vectors(self) -> np.ndarray:
        """(count, dim) float32, row i = record i. Cached until the next add."""
        if self._matrix is None:
            if self.records:
                self._matrix = np.stack([r.embedding for r in self.records])
            else:
                self._matrix = np.zeros((0, self.dim), dtype=np.float32)
        return self._matrix

    @property
    def vectors64(self) -> np.ndarray:
        """Float64 working copy of vectors (search-precision scratch), cached."""
        if self._matrix64 is None:
            self._matrix64 = self.vectors.astype(np.float64)
        return self._matrix64

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for r in self.records:
            counts[r.label] = counts.get(r.label, 0) + 1
        return counts

    def stats(self) -> dict:
        return {"count": len(self.records), "dim": self.dim, "labels": self.label_counts()}

    def save(self, path: str | Path) -> None:
        parts = [MAGIC, struct.pack("<HIQ", VERSION, self.dim, len(self.records))]

        label_table: list[str] = []
        ordinal: dict[str, int] = {}
        for r in self.records:
            if r.label not in ordinal:
                ordinal[r.label] = len(label_table)
                label_table.append(r.label)
        parts.append(struct.pack("<I", len(label_table)))
        for label in label_table:
            blob = label.encode("utf-8")
            parts.append(struct.pack("<I", len(blob)) + blob)
        if self.records:
            parts.append(
                np.array([ordinal[r.label] for r in self.records], dtype="<u4").tobytes()
            )
            parts.append(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
        for r in self.records:
            blob = r.source.encode("utf-8")
            parts.append(struct.pack("<I", len(blob)) + blob)

        payload = b"".join(parts)
        payload += struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)


def load_index(path: str | Path) -> ReferenceIndex:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IndexFormatError(f"cannot read index {path}: {exc}") from exc

    if len(blob) < 4 or blob[:4] != MAGIC:
        raise IndexFormatError(f"{path}: bad magic (not a reference index file)")
    if len(blob) < 4 + 14 + 4:
        raise IndexFormatError(f"{path}: truncated header")

    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise IndexFormatError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"
        )

    body = memoryview(blob)[: len(blob) - 4]
    pos = 4
    version, dim, count = struct.unpack_from("<HIQ", body, pos)
    pos += 14
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported version {version}")

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(body):
            raise IndexFormatError(f"{path}: truncated file")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    (n_labels,) = struct.unpack("<I", take(4))
    label_table = []
    for _ in range(n_labels):
        (ln,) = struct.unpack("<I", take(4))
        label_table.append(bytes(take(ln)).decode("utf-8"))

    index = ReferenceIndex(dim=int(dim))
    if count:
        ordinals = np.frombuffer(take(4 * count), dtype="<u4")
        if ordinals.size and n_labels and ordinals.max() >= n_labels:
            raise IndexFormatError(f"{path}: label ordinal out of range")
        if n_labels == 0:
            raise IndexFormatError(f"{path}: records present but label table empty")
        vectors = np.frombuffer(take(4 * count * dim), dtype="<f4").reshape(count, dim)
        sources = []
        for _ in range(count):
            (ln,) = struct.unpack("<I", take(4))
            sources.append(bytes(take(ln)).decode("utf-8"))
        for i in range(count):
            index.records.append(
                ReferenceRecord(
                    id=i,
                    label=label_table[ordinals[i]],
                    embedding=np.array(vectors[i], dtype=np.float32),
                    source=sources[i],
                )
            )
    if pos != len(body):
        raise IndexFormatError(f"{path}: {len(body) - pos} trailing bytes")
    return index
