import numpy as np
import pytest

from merit.dataset import Triplet
from merit.errors import FormatError
from merit.head import HeadParams
from merit.retrieval import (FactorIndex, FusionStrategy, build_approx_structure,
                             build_index, concat_cosine, fuse, load_index,
                             query_topk, save_index, search, simplex_grid,
                             tune_weights)
from merit.store import EmbeddingRecord, EmbeddingStore


def unit_rows(rng, n, d):
    V = rng.standard_normal((n, d))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def _passthrough_head(dim, factor):
    W1 = np.vstack([np.eye(dim), -np.eye(dim)])
    W2 = np.hstack([np.eye(dim), -np.eye(dim)])
    return HeadParams(W1, np.zeros(2 * dim), W2, factor)


def _block_head(in_dim, block, factor):
    """Head whose output is exactly the (normalized) coordinates of one block."""
    d = block.stop - block.start
    sel = np.zeros((d, in_dim))
    sel[np.arange(d), np.arange(block.start, block.stop)] = 1.0
    W1 = np.vstack([sel, -sel])
    W2 = np.hstack([np.eye(d), -np.eye(d)])
    return HeadParams(W1, np.zeros(2 * d), W2, factor)


def test_fuse_mean_and_product():
    assert fuse((1.0, 1.0, 1.0), FusionStrategy("mean")) == 1.0
    assert fuse((0.9, 0.9, 0.0), FusionStrategy("product")) == 0.0
    assert fuse((0.5, 0.5, 0.5), FusionStrategy("product")) == 0.125


def test_fuse_weighted_mean():
    s = (0.2, 0.4, 0.8)
    w = (0.5, 0.3, 0.2)
    assert fuse(s, FusionStrategy("wmean", w)) == pytest.approx(
        0.5 * 0.2 + 0.3 * 0.4 + 0.2 * 0.8)


def test_fusion_strategy_validation():
    with pytest.raises(ValueError):
        FusionStrategy("median")
    with pytest.raises(ValueError):
        FusionStrategy("wmean", (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        FusionStrategy("wmean", (-0.1, 0.6, 0.5))
    with pytest.raises(ValueError):
        FusionStrategy("mean", (1.0, 0.0, 0.0))


def test_concat_equals_mean_identity():
    rng = np.random.default_rng(12)
    for _ in range(200):
        ys_a = [unit_rows(rng, 1, 128)[0] for _ in range(3)]
        ys_b = [unit_rows(rng, 1, 128)[0] for _ in range(3)]
        scores = [float(a @ b) for a, b in zip(ys_a, ys_b)]
        literal = concat_cosine(ys_a, ys_b)
        via_fuse = fuse(scores, FusionStrategy("concat"))
        assert abs(literal - via_fuse) < 1e-9
        assert abs(via_fuse - fuse(scores, FusionStrategy("mean"))) < 1e-15


def test_fused_monotonicity():
    base = (0.1, 0.2, 0.3)
    for strat in (FusionStrategy("mean"),
                  FusionStrategy("wmean", (0.2, 0.3, 0.5))):
        f0 = fuse(base, strat)
        for i in range(3):
            bumped = list(base)
            bumped[i] += 0.05
            assert fuse(tuple(bumped), strat) > f0


def test_simplex_grid_count():
    grid = simplex_grid(0.05)
    assert len(grid) == 231  # (n+1)(n+2)/2 with n = 20
    assert grid == sorted(grid)
    for w in grid:
        assert abs(sum(w) - 1.0) < 1e-12
    assert len(simplex_grid(0.5)) == 6


def _library(rng, n=100, dim=12):
    records = [EmbeddingRecord(f"c{i:05d}",
                               np.abs(rng.standard_normal(dim)).astype(np.float32))
               for i in range(n)]
    return EmbeddingStore.from_records(records)


def test_build_index_counts_and_self_retrieval(rng):
    store = _library(rng)
    head = _passthrough_head(store.dim, "melody")
    index = build_index(head, store)
    assert len(index) == 100
    assert index.skipped == []
    q = index.vectors[17]
    results = search(index, q, 10)
    assert results[0][0] == "c00017"
    assert results[0][1] == pytest.approx(1.0, abs=1e-6)


def test_search_empty_index():
    index = FactorIndex("melody", [], np.zeros((0, 4)))
    with pytest.raises(ValueError, match="empty index"):
        search(index, np.array([1.0, 0, 0, 0]), 5)


def test_approx_matches_exact_on_clustered_data():
    rng = np.random.default_rng(5)
    centers = unit_rows(rng, 8, 32)
    V = np.repeat(centers, 50, axis=0) + 0.05 * rng.standard_normal((400, 32))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    ids = [f"c{i}" for i in range(400)]
    exact = FactorIndex("rhythm", ids, V.copy())
    approx = FactorIndex("rhythm", ids, V.copy())
    build_approx_structure(approx, nlist=8, nprobe=3, seed=1)
    hits = 0
    for qi in range(0, 400, 40):
        e = [cid for cid, _ in search(exact, V[qi], 10)]
        a = [cid for cid, _ in search(approx, V[qi], 10)]
        hits += len(set(e) & set(a))
    assert hits / 100 >= 0.95


def test_index_roundtrip(tmp_path, rng):
    store = _library(rng, n=20)
    head = _passthrough_head(store.dim, "timbre")
    index = build_index(head, store)
    path = tmp_path / "t.idx"
    save_index(index, path)
    loaded = load_index(path)
    assert loaded.factor == "timbre"
    assert loaded.ids == index.ids
    # f32 quantization then re-normalization: equal to ~1e-7
    assert np.allclose(loaded.vectors, index.vectors, atol=1e-6)
    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"WRONGMAG" + b"\x00" * 16)
    with pytest.raises(FormatError, match="bad magic"):
        load_index(bad)


def _three_block_setup(rng, n=40, d=4):
    """Embeddings made of three d-wide blocks; heads read one block each."""
    in_dim = 3 * d
    vecs = rng.standard_normal((n, in_dim))
    records = [EmbeddingRecord(f"c{i:04d}", vecs[i].astype(np.float32))
               for i in range(n)]
    store = EmbeddingStore.from_records(records)
    heads = {
        "melody": _block_head(in_dim, slice(0, d), "melody"),
        "rhythm": _block_head(in_dim, slice(d, 2 * d), "rhythm"),
        "timbre": _block_head(in_dim, slice(2 * d, 3 * d), "timbre"),
    }
    indexes = {f: build_index(h, store) for f, h in heads.items()}
    return store, heads, indexes


def test_query_single_clip_library(rng):
    store, heads, indexes = _three_block_setup(rng, n=1)
    z = store.vectors64(["c0000"])[0]
    result = query_topk(z, heads, indexes, k=10)
    assert len(result.fused) == 1
    cand = result.fused[0]
    assert cand.clip_id == "c0000"
    for f in ("melody", "rhythm", "timbre"):
        assert cand.scores[f] == pytest.approx(1.0, abs=1e-9)
    assert cand.fused == pytest.approx(1.0, abs=1e-9)


def test_query_per_factor_exposure(rng):
    store, heads, indexes = _three_block_setup(rng, n=30)
    # craft a query equal to clip 5 on the melody block, random elsewhere
    z5 = store.vectors64(["c0005"])[0]
    z = np.concatenate([z5[:4], 10 + np.arange(8.0)])
    result = query_topk(z, heads, indexes, k=5)
    mel_view = result.by_factor["melody"]
    assert mel_view[0].clip_id == "c0005"
    assert mel_view[0].scores["melody"] == pytest.approx(1.0, abs=1e-9)
    # all three scores are exposed for every candidate, in every view
    for view in result.by_factor.values():
        for cand in view:
            assert set(cand.scores) == {"melody", "rhythm", "timbre"}
    # factor views are sorted by their own factor score
    for f, view in result.by_factor.items():
        scores = [c.scores[f] for c in view]
        assert scores == sorted(scores, reverse=True)
    fused = [c.fused for c in result.fused]
    assert fused == sorted(fused, reverse=True)


def test_query_planted_two_factor_pair(rng):
    """A pair sharing two factors shows two high scores and one low one."""
    d = 4
    base = rng.standard_normal(3 * d)
    partner = base.copy()
    partner[2 * d:] = -base[2 * d:]  # flip timbre block only
    records = [EmbeddingRecord("query", base.astype(np.float32)),
               EmbeddingRecord("cover", partner.astype(np.float32))]
    for i in range(20):
        records.append(EmbeddingRecord(
            f"noise{i}", rng.standard_normal(3 * d).astype(np.float32)))
    store = EmbeddingStore.from_records(records)
    heads = {
        "melody": _block_head(3 * d, slice(0, d), "melody"),
        "rhythm": _block_head(3 * d, slice(d, 2 * d), "rhythm"),
        "timbre": _block_head(3 * d, slice(2 * d, 3 * d), "timbre"),
    }
    indexes = {f: build_index(h, store) for f, h in heads.items()}
    result = query_topk(store.vectors64(["query"])[0], heads, indexes, k=5)
    # the pair tops the melody view (tied with the query itself) and its
    # profile reads: two high factor scores, one low
    mel_ids = [c.clip_id for c in result.by_factor["melody"]]
    assert "cover" in mel_ids[:2]
    cover = next(c for c in result.by_factor["melody"] if c.clip_id == "cover")
    assert cover.scores["melody"] == pytest.approx(1.0, abs=1e-6)
    assert cover.scores["rhythm"] == pytest.approx(1.0, abs=1e-6)
    assert cover.scores["timbre"] == pytest.approx(-1.0, abs=1e-6)


def test_query_id_universe_mismatch(rng):
    store, heads, indexes = _three_block_setup(rng, n=10)
    smaller = EmbeddingStore.from_records(store.records[:5])
    indexes["timbre"] = build_index(heads["timbre"], smaller)
    with pytest.raises(ValueError, match="universe"):
        query_topk(store.vectors64(["c0000"])[0], heads, indexes)


def test_tune_weights_single_informative_factor(rng):
    d = 4
    n_trip = 60
    vecs = []
    triplets = []
    for i in range(n_trip):
        a = rng.standard_normal(3 * d)
        p = a.copy()
        p[d:] = rng.standard_normal(2 * d)          # shares only the melody block
        p[:d] = a[:d] + 0.01 * rng.standard_normal(d)
        n = rng.standard_normal(3 * d)
        vecs += [a, p, n]
        triplets.append(Triplet(f"a{i}", f"p{i}", f"n{i}"))
    records = []
    for i in range(n_trip):
        records += [EmbeddingRecord(f"a{i}", vecs[3 * i].astype(np.float32)),
                    EmbeddingRecord(f"p{i}", vecs[3 * i + 1].astype(np.float32)),
                    EmbeddingRecord(f"n{i}", vecs[3 * i + 2].astype(np.float32))]
    store = EmbeddingStore.from_records(records)
    heads = {
        "melody": _block_head(3 * d, slice(0, d), "melody"),
        "rhythm": _block_head(3 * d, slice(d, 2 * d), "rhythm"),
        "timbre": _block_head(3 * d, slice(2 * d, 3 * d), "timbre"),
    }
    w = tune_weights(triplets, heads, store, grid_step=0.05)
    assert w[0] >= 0.9
    assert w[1] + w[2] <= 0.1


def test_tune_weights_tie_breaks_lexicographically(rng):
    store, heads, _ = _three_block_setup(rng, n=12)
    same = heads["melody"]
    equal_heads = {"melody": same, "rhythm": same, "timbre": same}
    triplets = [Triplet("c0000", "c0001", "c0002"),
                Triplet("c0003", "c0004", "c0005")]
    w = tune_weights(triplets, equal_heads, store, grid_step=0.5)
    assert w == (0.0, 0.0, 1.0)


def test_tune_weights_empty_validation(rng):
    store, heads, _ = _three_block_setup(rng, n=6)
    with pytest.raises(ValueError, match="empty validation"):
        tune_weights([], heads, store)
