"""Synthetic planted-factor embeddings: the verification oracle for the full
train/evaluate pipeline.

Each of the three factors owns a disjoint coordinate block of the embedding
space. A clip is the sum of per-factor codes mapped into their blocks plus
isotropic noise; all members of a factor-f folder share the same factor-f
code and draw the other codes fresh. A linear projector onto a factor's
block therefore separates that factor's triplets perfectly in the noiseless
case, which makes training failures diagnosable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import (FACTORS, FolderEntry, TripletManifest, build_manifest,
                      split_folders)
from .store import ClipMeta, EmbeddingRecord, EmbeddingStore, write_meta, write_store

# With leak > 0 a fraction of the shared code spills into the next factor's
# code (melody -> rhythm -> timbre -> melody), emulating coupled factors.
_LEAK_TARGET = {"melody": "rhythm", "rhythm": "timbre", "timbre": "melody"}


@dataclass
class SynthConfig:
    in_dim: int = 256
    factor_subspace_dim: int = 16
    n_folders: int = 200          # per factor
    k: int = 3                    # positives per anchor
    noise_sigma: float = 0.05
    cross_factor_leak: float = 0.0
    seed: int = 0
    n_classes: int = 4
    rotate: bool = False          # random-rotation stress mode
    split_ratio: float = 0.9

    def __post_init__(self):
        if 3 * self.factor_subspace_dim > self.in_dim:
            raise ValueError("3 * factor_subspace_dim must be <= in_dim")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0.0 <= self.cross_factor_leak < 1.0:
            raise ValueError("cross_factor_leak must be in [0, 1)")
        if self.n_folders < 2 or self.k < 1 or self.n_classes < 2:
            raise ValueError("need n_folders >= 2, k >= 1, n_classes >= 2")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class SynthResult:
    records: list[EmbeddingRecord]
    metas: dict[str, ClipMeta]
    folders: dict[str, list[FolderEntry]]
    train_manifests: dict[str, TripletManifest]
    test_manifests: dict[str, TripletManifest]
    loadings: dict[str, np.ndarray]  # factor -> (subspace_dim, subspace_dim)
    rotation: np.ndarray | None = None

    def store(self) -> EmbeddingStore:
        return EmbeddingStore.from_records(self.records)


def factor_block_slice(cfg: SynthConfig, factor: str) -> slice:
    """Coordinate slice owned by a factor (before any global rotation)."""
    i = FACTORS.index(factor)
    d = cfg.factor_subspace_dim
    return slice(i * d, (i + 1) * d)


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def generate(cfg: SynthConfig) -> SynthResult:
    """Build the store, metadata, and per-factor train/test manifests."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.factor_subspace_dim
    loadings = {f: _orthogonal(rng, d) for f in FACTORS}
    # separate stream: toggling rotate must not shift the clip draws
    rotation = (_orthogonal(np.random.default_rng((cfg.seed, 1)), cfg.in_dim)
                if cfg.rotate else None)

    records: list[EmbeddingRecord] = []
    metas: dict[str, ClipMeta] = {}
    folders: dict[str, list[FolderEntry]] = {f: [] for f in FACTORS}

    for factor in FACTORS:
        leak_into = _LEAK_TARGET[factor]
        for j in range(cfg.n_folders):
            folder_id = f"{factor}-folder-{j:04d}"
            song_id = f"song-{factor}-{j:04d}"
            shared = rng.standard_normal(d)
            member_ids: list[str] = []
            for m in range(cfg.k + 1):
                codes = {}
                for g in FACTORS:
                    if g == factor:
                        codes[g] = shared
                    else:
                        fresh = rng.standard_normal(d)
                        if cfg.cross_factor_leak > 0 and g == leak_into:
                            fresh = (cfg.cross_factor_leak * shared
                                     + (1.0 - cfg.cross_factor_leak) * fresh)
                        codes[g] = fresh
                vec = np.zeros(cfg.in_dim)
                for g in FACTORS:
                    vec[factor_block_slice(cfg, g)] = loadings[g] @ codes[g]
                if cfg.noise_sigma > 0:
                    vec += cfg.noise_sigma * rng.standard_normal(cfg.in_dim)
                if rotation is not None:
                    vec = rotation @ vec
                clip_id = f"{factor}-f{j:04d}-m{m}"
                records.append(EmbeddingRecord(clip_id, vec.astype(np.float32)))
                metas[clip_id] = ClipMeta(
                    clip_id=clip_id,
                    folder_id=folder_id,
                    class_label=f"class-{(j + m) % cfg.n_classes}",
                    source_song_id=song_id,
                )
                member_ids.append(clip_id)
            folders[factor].append(FolderEntry(
                folder_id=folder_id,
                anchor_id=member_ids[0],
                positive_ids=member_ids[1:],
                factor=factor,
            ))

    train_manifests: dict[str, TripletManifest] = {}
    test_manifests: dict[str, TripletManifest] = {}
    for factor in FACTORS:
        split_seed = int(rng.integers(0, 2 ** 63))
        train_seed = int(rng.integers(0, 2 ** 63))
        test_seed = int(rng.integers(0, 2 ** 63))
        train_f, test_f = split_folders(folders[factor], cfg.split_ratio, split_seed)
        universe = [cid for f in folders[factor] for cid in f.members]
        train_manifests[factor] = build_manifest(
            train_f, "train", train_seed, negative_universe=universe)
        test_manifests[factor] = build_manifest(
            test_f, "test", test_seed, negative_universe=universe)
    return SynthResult(records, metas, folders, train_manifests, test_manifests,
                       loadings, rotation)


def write_outputs(result: SynthResult, out_dir: str | Path) -> dict[str, Path]:
    """Write store.bin, the metadata sidecar, and six manifests; returns paths."""
    from .dataset import save_manifest
    from .store import meta_sidecar_path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifests").mkdir(exist_ok=True)
    paths: dict[str, Path] = {}
    store_path = out / "store.bin"
    write_store(result.records, store_path, n_blocks=1,
                block_dim=result.records[0].vector.shape[0])
    paths["store"] = store_path
    meta_path = meta_sidecar_path(store_path)
    write_meta(result.metas, meta_path)
    paths["meta"] = meta_path
    for factor in FACTORS:
        for split, manifests in (("train", result.train_manifests),
                                 ("test", result.test_manifests)):
            p = out / "manifests" / f"{factor}_{split}.jsonl"
            save_manifest(manifests[factor], p)
            paths[f"{factor}_{split}"] = p
    return paths
