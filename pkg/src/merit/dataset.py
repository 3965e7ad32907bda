"""Triplet manifest construction: k^2 folder expansion, negative sampling,
folder-level splits, and class-label probe triplets.

Manifest file format: line-delimited JSON. First line is a header
``{"factor":..., "split":..., "seed":..., "folder_count":...}``; every
subsequent line is one triplet ``{"a": id, "p": id, "n": id}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .store import ClipMeta

FACTORS = ("melody", "rhythm", "timbre")


@dataclass
class FolderEntry:
    """An anchor plus its k factor-matched positives; the unit of splitting."""

    folder_id: str
    anchor_id: str
    positive_ids: list[str]
    factor: str

    def __post_init__(self):
        if len(self.positive_ids) < 1:
            raise ValueError(f"folder {self.folder_id!r}: k must be >= 1")
        if self.anchor_id in self.positive_ids:
            raise ValueError(f"folder {self.folder_id!r}: anchor among positives")
        if len(set(self.positive_ids)) != len(self.positive_ids):
            raise ValueError(f"folder {self.folder_id!r}: duplicate positives")

    @property
    def members(self) -> list[str]:
        return [self.anchor_id] + self.positive_ids

    @property
    def k(self) -> int:
        return len(self.positive_ids)


@dataclass(frozen=True)
class Triplet:
    anchor_id: str
    positive_id: str
    negative_id: str


@dataclass
class TripletManifest:
    factor: str
    split: str  # "train" or "test"
    triplets: list[Triplet]
    seed: int
    folder_ids_in_split: list[str] = field(default_factory=list)
    # Folder ids are in-memory only; the serialized header carries just their
    # count, so a loaded manifest knows the count but not the ids.
    folder_count: int = -1

    def __post_init__(self):
        if self.folder_count < 0:
            self.folder_count = len(self.folder_ids_in_split)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def expand_folder(folder: FolderEntry, negative_pool: Sequence[str], seed) -> list[Triplet]:
    """Expand one folder into exactly k^2 triplets.

    Emits the k anchor-positive triplets (A, P_i, N) followed by the k(k-1)
    cross-positive triplets (P_i, P_j, N), i != j, in lexicographic (i, j)
    order. Each triplet's negative is drawn uniformly from negative_pool with
    the given seed (or Generator), so the result is deterministic.
    """
    if folder.k < 1:
        raise ValueError("k must be >= 1")
    if len(negative_pool) == 0:
        raise ValueError("empty negative_pool")
    members = set(folder.members)
    overlap = members.intersection(negative_pool)
    if overlap:
        raise ValueError(f"negative_pool overlaps folder members: {sorted(overlap)[:3]}")

    rng = _as_rng(seed)
    pool = list(negative_pool)

    def draw() -> str:
        return pool[int(rng.integers(0, len(pool)))]

    triplets = [Triplet(folder.anchor_id, p, draw()) for p in folder.positive_ids]
    for i, pi in enumerate(folder.positive_ids):
        for j, pj in enumerate(folder.positive_ids):
            if i != j:
                triplets.append(Triplet(pi, pj, draw()))
    return triplets


def split_folders(
    folders: Sequence[FolderEntry], ratio: float = 0.9, seed: int = 0
) -> tuple[list[FolderEntry], list[FolderEntry]]:
    """Deterministic folder-disjoint partition; train gets floor(ratio * n)."""
    if len(folders) < 2:
        raise ValueError("need at least 2 folders to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    n = len(folders)
    n_train = math.floor(ratio * n)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_idx = set(perm[:n_train].tolist())
    train = [f for i, f in enumerate(folders) if i in train_idx]
    test = [f for i, f in enumerate(folders) if i not in train_idx]
    return train, test


def count_triplets(folders: Sequence[FolderEntry]) -> int:
    """Total triplets after k^2 expansion: sum of k_i^2."""
    return sum(f.k ** 2 for f in folders)


def build_manifest(
    folders: Sequence[FolderEntry],
    split: str,
    seed: int,
    negative_universe: Sequence[str] | None = None,
) -> TripletManifest:
    """Expand every folder against a shared universe of candidate negatives.

    The per-folder pool is the universe minus the folder's own members. When
    negative_universe is None it defaults to all clips appearing in ``folders``.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if negative_universe is None:
        universe: list[str] = []
        seen: set[str] = set()
        for f in folders:
            for cid in f.members:
                if cid not in seen:
                    seen.add(cid)
                    universe.append(cid)
    else:
        universe = list(negative_universe)

    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    for folder in folders:
        members = set(folder.members)
        pool = [cid for cid in universe if cid not in members]
        triplets.extend(expand_folder(folder, pool, rng))
    factor = folders[0].factor if folders else "melody"
    return TripletManifest(
        factor=factor,
        split=split,
        triplets=triplets,
        seed=int(seed),
        folder_ids_in_split=[f.folder_id for f in folders],
    )


def build_class_triplets(
    metas: Mapping[str, ClipMeta] | Sequence[ClipMeta],
    rule: str,
    seed: int = 0,
    n_per_anchor: int = 1,
) -> list[Triplet]:
    """Probe triplets from class labels.

    Anchor and positive share class_label and differ in source_song_id; the
    negative has a different class_label. Under ``same_song_negative`` the
    negative additionally shares the anchor's source_song_id; under
    ``any_negative`` any different-class clip qualifies. Clips without a
    class_label are ignored. Anchors are visited in sorted clip_id order.
    """
    if rule not in ("same_song_negative", "any_negative"):
        raise ValueError(f"unknown rule: {rule!r}")
    if not isinstance(metas, Mapping):
        metas = {m.clip_id: m for m in metas}
    labeled = {cid: m for cid, m in metas.items() if m.class_label is not None}
    classes = {m.class_label for m in labeled.values()}
    if len(classes) < 2:
        raise ValueError("need >= 2 classes")

    by_class: dict[str, list[str]] = {}
    by_song: dict[str, list[str]] = {}
    for cid in sorted(labeled):
        m = labeled[cid]
        by_class.setdefault(m.class_label, []).append(cid)
        if m.source_song_id is not None:
            by_song.setdefault(m.source_song_id, []).append(cid)

    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    for cid in sorted(labeled):
        m = labeled[cid]
        positives = [
            p for p in by_class[m.class_label]
            if p != cid and labeled[p].source_song_id != m.source_song_id
        ]
        if not positives:
            raise ValueError(
                f"class {m.class_label!r} has < 2 songs: no positive for {cid!r}")
        if rule == "same_song_negative":
            negatives = [
                n for n in by_song.get(m.source_song_id, [])
                if labeled[n].class_label != m.class_label
            ]
        else:
            negatives = [
                n for n in sorted(labeled)
                if labeled[n].class_label != m.class_label
            ]
        if not negatives:
            raise ValueError(f"no valid negative under {rule!r} for anchor {cid!r}")
        for _ in range(n_per_anchor):
            p = positives[int(rng.integers(0, len(positives)))]
            n = negatives[int(rng.integers(0, len(negatives)))]
            triplets.append(Triplet(cid, p, n))
    return triplets


def save_manifest(manifest: TripletManifest, path: str | Path) -> None:
    header = {
        "factor": manifest.factor,
        "split": manifest.split,
        "seed": manifest.seed,
        "folder_count": manifest.folder_count,
    }
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for t in manifest.triplets:
            f.write(json.dumps(
                {"a": t.anchor_id, "p": t.positive_id, "n": t.negative_id},
                sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> TripletManifest:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if not first:
            raise ValueError(f"empty manifest file: {path}")
        header = json.loads(first)
        for key in ("factor", "split", "seed", "folder_count"):
            if key not in header:
                raise ValueError(f"manifest header missing {key!r}")
        triplets = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            triplets.append(Triplet(obj["a"], obj["p"], obj["n"]))
    return TripletManifest(
        factor=header["factor"],
        split=header["split"],
        triplets=triplets,
        seed=int(header["seed"]),
        folder_count=int(header["folder_count"]),
    )
