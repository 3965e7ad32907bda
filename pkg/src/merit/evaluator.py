"""Evaluation protocol: triplet accuracy, the 3x3 disentanglement matrix with
Wald confidence intervals, cosine-distance margin statistics, and per-class
breakdowns. Ties count as incorrect, so reported accuracy is conservative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import FACTORS, Triplet, TripletManifest
from .errors import DegenerateOutputError
from .head import HeadParams, forward_batch
from .store import ClipMeta, EmbeddingStore

Z95 = 1.96


def wald_ci(p: float, n: int) -> float:
    """Half-width of the Wald 95% interval: 1.96 * sqrt(p(1-p)/N)."""
    if n < 1:
        raise ValueError("N must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    return Z95 * float(np.sqrt(p * (1.0 - p) / n))


def _pair_cosines(
    params: HeadParams | None,
    triplets: Sequence[Triplet],
    store: EmbeddingStore,
    lenient: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(cos_AP, cos_AN, kept_mask) for every triplet.

    With params=None the raw store vectors are compared directly (the
    "no head" baseline); otherwise clips are projected once through the head.
    In lenient mode triplets touching a degenerate projection are dropped.
    """
    if not triplets:
        raise ValueError("no triplets to evaluate")
    ids: list[str] = []
    seen: set[str] = set()
    for t in triplets:
        for cid in (t.anchor_id, t.positive_id, t.negative_id):
            if cid not in seen:
                seen.add(cid)
                ids.append(cid)
    Z = store.vectors64(ids)

    if params is None:
        norms = np.linalg.norm(Z, axis=1)
        ok = norms > 0.0
        Y = Z / np.where(ok, norms, 1.0)[:, None]
    else:
        Y, ok = forward_batch(params, Z, lenient=True)
        if not lenient and not ok.all():
            bad = [ids[i] for i in np.where(~ok)[0][:5]]
            raise DegenerateOutputError(f"degenerate projection for clips {bad}")

    pos = {cid: i for i, cid in enumerate(ids)}
    a = np.array([pos[t.anchor_id] for t in triplets])
    p = np.array([pos[t.positive_id] for t in triplets])
    nn = np.array([pos[t.negative_id] for t in triplets])
    cos_ap = np.sum(Y[a] * Y[p], axis=1)
    cos_an = np.sum(Y[a] * Y[nn], axis=1)
    kept = ok[a] & ok[p] & ok[nn]
    return cos_ap, cos_an, kept


def triplet_accuracy(
    params: HeadParams | None,
    triplets: Sequence[Triplet],
    store: EmbeddingStore,
    lenient: bool = False,
) -> tuple[float, int]:
    """Fraction of triplets ranking the positive strictly closer than the
    negative; exact ties are incorrect. Returns (p, N)."""
    cos_ap, cos_an, kept = _pair_cosines(params, triplets, store, lenient)
    cos_ap, cos_an = cos_ap[kept], cos_an[kept]
    n = int(kept.sum())
    if n == 0:
        raise ValueError("no evaluable triplets (all degenerate)")
    return float(np.mean(cos_ap > cos_an)), n


def margin_stats(
    params: HeadParams | None,
    triplets: Sequence[Triplet],
    store: EmbeddingStore,
    lenient: bool = False,
) -> float:
    """Mean of d_AN - d_AP with d = 1 - cosine, i.e. mean(cos_AP - cos_AN)."""
    cos_ap, cos_an, kept = _pair_cosines(params, triplets, store, lenient)
    return float(np.mean(cos_ap[kept] - cos_an[kept]))


@dataclass
class EvalCell:
    head: str
    testset: str
    acc: float
    ci: float
    margin: float
    n: int


@dataclass
class EvalReport:
    """3x3 head-by-testset grid plus optional baseline and per-class rows."""

    factors: tuple[str, ...]
    cells: list[EvalCell]
    per_class: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def cell(self, head: str, testset: str) -> EvalCell:
        for c in self.cells:
            if c.head == head and c.testset == testset:
                return c
        raise KeyError((head, testset))

    def to_json_dict(self) -> dict:
        return {
            "cells": [
                {"head": c.head, "testset": c.testset, "acc": c.acc,
                 "ci": c.ci, "margin": c.margin, "n": c.n}
                for c in self.cells
            ],
            "per_class": self.per_class,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1) + "\n"

    def render_table(self) -> str:
        """Plain-text grid, rows = models, columns = factor test sets."""
        heads = []
        for c in self.cells:
            if c.head not in heads:
                heads.append(c.head)
        lines = []
        width = max(12, max(len(h) for h in heads) + 2)
        header = "model".ljust(width) + "".join(f"{f:>22}" for f in self.factors)
        lines.append(header)
        lines.append("-" * len(header))
        for h in heads:
            row = h.ljust(width)
            for f in self.factors:
                c = self.cell(h, f)
                row += f"{100 * c.acc:13.1f} ±{100 * c.ci:4.1f}   "
            lines.append(row)
        return "\n".join(lines) + "\n"


def disentanglement_matrix(
    heads: Mapping[str, HeadParams],
    test_manifests: Mapping[str, TripletManifest],
    store: EmbeddingStore,
    include_baseline: bool = True,
    lenient: bool = False,
) -> EvalReport:
    """Evaluate every head on every factor test set (rows = heads, columns =
    factor test sets; the diagonal is each head's intended factor). The
    optional baseline row scores raw store vectors under plain cosine."""
    factors = tuple(f for f in FACTORS if f in test_manifests)
    if not factors:
        raise ValueError("no test manifests given")
    for f in factors:
        if f not in heads:
            raise ValueError(f"missing head for factor {f!r}")

    cells: list[EvalCell] = []
    if include_baseline:
        for f_test in factors:
            triplets = test_manifests[f_test].triplets
            acc, n = triplet_accuracy(None, triplets, store, lenient)
            cells.append(EvalCell("raw", f_test, acc, wald_ci(acc, n),
                                  margin_stats(None, triplets, store, lenient), n))
    for f_head in factors:
        for f_test in factors:
            triplets = test_manifests[f_test].triplets
            acc, n = triplet_accuracy(heads[f_head], triplets, store, lenient)
            margin = margin_stats(heads[f_head], triplets, store, lenient)
            cells.append(EvalCell(f_head, f_test, acc, wald_ci(acc, n), margin, n))
    return EvalReport(factors=factors, cells=cells)


def per_class_accuracy(
    params: HeadParams,
    class_triplets: Sequence[Triplet],
    metas: Mapping[str, ClipMeta],
    store: EmbeddingStore,
    lenient: bool = False,
) -> dict[str, tuple[float, int]]:
    """Triplet accuracy grouped by the anchor's class_label. Classes without
    any triplets simply do not appear in the result."""
    groups: dict[str, list[Triplet]] = {}
    for t in class_triplets:
        meta = metas.get(t.anchor_id)
        if meta is None or meta.class_label is None:
            raise ValueError(f"anchor {t.anchor_id!r} has no class label")
        groups.setdefault(meta.class_label, []).append(t)
    return {
        label: triplet_accuracy(params, ts, store, lenient)
        for label, ts in sorted(groups.items())
    }
