"""Bit-exact on-disk store for cached encoder embeddings plus clip metadata.

Binary layout (all integers little-endian):

    header:  magic ``MERITEMB`` (8 bytes) | version u32 | dim u32
             | n_blocks u32 | block_dim u32 | record_count u64
    record:  id_len u16 | id bytes (UTF-8) | dim * f32

Vectors are IEEE-754 single precision on disk and in ``EmbeddingRecord``;
consumers that need double precision widen on load. Clip metadata lives in a
sidecar JSON file keyed by clip_id, keeping the vector file append-friendly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError

MAGIC = b"MERITEMB"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQ")


@dataclass
class StoreHeader:
    version: int
    dim: int
    n_blocks: int
    block_dim: int
    record_count: int


@dataclass
class EmbeddingRecord:
    clip_id: str
    vector: np.ndarray  # float32, shape (dim,)


@dataclass
class ClipMeta:
    clip_id: str
    folder_id: str | None = None
    class_label: str | None = None
    source_song_id: str | None = None


@dataclass
class ValidationReport:
    """Outcome of consistency checks between a store and its consumers."""

    unresolved_ids: list[str] = field(default_factory=list)
    dim_mismatches: list[str] = field(default_factory=list)
    non_finite_ids: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.unresolved_ids or self.dim_mismatches or self.non_finite_ids)

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "unresolved_ids": self.unresolved_ids,
            "dim_mismatches": self.dim_mismatches,
            "non_finite_ids": self.non_finite_ids,
        }


def default_blocks(dim: int) -> tuple[int, int]:
    """Block layout when the writer does not specify one: 1024-wide layer
    blocks for encoder-shaped dims, otherwise a single block."""
    if dim % 1024 == 0:
        return dim // 1024, 1024
    return 1, dim


def write_store(
    records: Sequence[EmbeddingRecord],
    path: str | Path,
    n_blocks: int | None = None,
    block_dim: int | None = None,
) -> None:
    """Write records to ``path``; round-trips byte-for-byte through read_store."""
    if len(records) == 0:
        raise ValueError("empty store: need at least one record")
    dim = int(records[0].vector.shape[0])
    if n_blocks is None or block_dim is None:
        n_blocks, block_dim = default_blocks(dim)
    if n_blocks * block_dim != dim:
        raise ValueError(f"n_blocks * block_dim != dim ({n_blocks} * {block_dim} != {dim})")

    seen: set[str] = set()
    for rec in records:
        if not rec.clip_id:
            raise ValueError("empty clip_id")
        if rec.clip_id in seen:
            raise ValueError(f"duplicate clip_id: {rec.clip_id!r}")
        seen.add(rec.clip_id)
        if rec.vector.ndim != 1 or rec.vector.shape[0] != dim:
            raise ValueError(f"dimension mismatch for {rec.clip_id!r}: "
                             f"{rec.vector.shape} vs dim {dim}")
        if not np.isfinite(rec.vector).all():
            raise ValueError(f"non-finite component in {rec.clip_id!r}")

    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, dim, n_blocks, block_dim, len(records)))
        for rec in records:
            id_bytes = rec.clip_id.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"clip_id too long: {len(id_bytes)} bytes")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(np.ascontiguousarray(rec.vector, dtype="<f4").tobytes())


def read_store(path: str | Path) -> tuple[StoreHeader, list[EmbeddingRecord]]:
    """Read a store file; returns records in write order, vectors bit-exact."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, dim, n_blocks, block_dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic: {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version: {version}")
    if n_blocks * block_dim != dim:
        raise FormatError(f"header inconsistency: {n_blocks} * {block_dim} != {dim}")

    records: list[EmbeddingRecord] = []
    off = _HEADER.size
    vec_bytes = 4 * dim
    for _ in range(count):
        if off + 2 > len(data):
            raise FormatError("truncated file: expected id length")
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + vec_bytes > len(data):
            raise FormatError("truncated file: incomplete record")
        clip_id = data[off:off + id_len].decode("utf-8")
        off += id_len
        vector = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += vec_bytes
        records.append(EmbeddingRecord(clip_id, vector))
    if off != len(data):
        raise FormatError(f"record count mismatch: {len(data) - off} trailing bytes")

    header = StoreHeader(version, dim, n_blocks, block_dim, count)
    return header, records


class EmbeddingStore:
    """In-memory view of a store: id lookup plus a dense float32 matrix."""

    def __init__(self, header: StoreHeader, records: Sequence[EmbeddingRecord]):
        self.header = header
        self.records = list(records)
        self.ids = [r.clip_id for r in self.records]
        self.id_index = {cid: i for i, cid in enumerate(self.ids)}
        if self.records:
            self.matrix = np.stack([r.vector for r in self.records])
        else:
            self.matrix = np.zeros((0, header.dim), dtype=np.float32)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        header, records = read_store(path)
        return cls(header, records)

    @classmethod
    def from_records(cls, records: Sequence[EmbeddingRecord],
                     n_blocks: int | None = None,
                     block_dim: int | None = None) -> "EmbeddingStore":
        dim = int(records[0].vector.shape[0])
        if n_blocks is None or block_dim is None:
            n_blocks, block_dim = default_blocks(dim)
        header = StoreHeader(VERSION, dim, n_blocks, block_dim, len(records))
        return cls(header, records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int:
        return self.header.dim

    def vectors64(self, clip_ids: Iterable[str]) -> np.ndarray:
        """Gather vectors for clip_ids as a float64 matrix; raises on unknown ids."""
        rows = []
        for cid in clip_ids:
            idx = self.id_index.get(cid)
            if idx is None:
                raise KeyError(f"unknown clip_id: {cid!r}")
            rows.append(idx)
        return self.matrix[rows].astype(np.float64)


def meta_sidecar_path(store_path: str | Path) -> Path:
    return Path(str(store_path) + ".meta.json")


def write_meta(metas: dict[str, ClipMeta] | Iterable[ClipMeta], path: str | Path) -> None:
    if not isinstance(metas, dict):
        metas = {m.clip_id: m for m in metas}
    obj = {
        cid: {
            "folder_id": m.folder_id,
            "class_label": m.class_label,
            "source_song_id": m.source_song_id,
        }
        for cid, m in metas.items()
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=0)
        f.write("\n")


def read_meta(path: str | Path) -> dict[str, ClipMeta]:
    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return {
        cid: ClipMeta(
            clip_id=cid,
            folder_id=entry.get("folder_id"),
            class_label=entry.get("class_label"),
            source_song_id=entry.get("source_song_id"),
        )
        for cid, entry in obj.items()
    }


def validate_store(
    store_path: str | Path,
    manifest_paths: Sequence[str | Path] = (),
    expected_dim: int | None = None,
) -> ValidationReport:
    """Check that every id referenced by the given manifests resolves in the
    store and that dimensions line up. Inconsistencies are reported, not thrown."""
    from .dataset import load_manifest  # local import to avoid a cycle

    header, records = read_store(store_path)
    report = ValidationReport()
    known = {r.clip_id for r in records}

    for rec in records:
        if not np.isfinite(rec.vector).all():
            report.non_finite_ids.append(rec.clip_id)

    if expected_dim is not None and header.dim != expected_dim:
        report.dim_mismatches.append(
            f"store dim {header.dim} != expected {expected_dim}")

    unresolved: set[str] = set()
    for mpath in manifest_paths:
        manifest = load_manifest(mpath)
        for t in manifest.triplets:
            for cid in (t.anchor_id, t.positive_id, t.negative_id):
                if cid not in known:
                    unresolved.add(cid)
    report.unresolved_ids = sorted(unresolved)
    return report
