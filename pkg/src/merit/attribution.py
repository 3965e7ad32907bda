"""Layer attribution: per-block Frobenius-norm mass of a head's first-layer
weights. The input axis of W1 partitions into contiguous blocks, one per
backbone layer; each block's share of the total norm says how strongly the
head attends to that layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .head import HeadParams

# Default block labels for the 5-block encoder layout.
DEFAULT_LAYER_LABELS = ("3", "4", "5", "6", "23")


@dataclass
class AttributionRow:
    factor: str
    fractions: np.ndarray  # (n_blocks,), >= 0, sums to 1


def attribute(W1: np.ndarray, n_blocks: int, block_dim: int) -> np.ndarray:
    """fraction_i = ||B_i||_F / sum_j ||B_j||_F over contiguous column blocks.

    Norms are scaled by their maximum before normalizing so the landmark
    cases (all-equal blocks, single nonzero block) come out exact.
    """
    W1 = np.asarray(W1, dtype=np.float64)
    if W1.ndim != 2 or W1.shape[1] != n_blocks * block_dim:
        raise ValueError(
            f"W1 has {W1.shape} columns, expected {n_blocks} x {block_dim}")
    norms = np.array([
        np.linalg.norm(W1[:, i * block_dim:(i + 1) * block_dim])
        for i in range(n_blocks)
    ])
    peak = norms.max()
    if peak == 0.0:
        raise ValueError("all-zero W1: attribution undefined")
    scaled = norms / peak
    return scaled / scaled.sum()


def attribute_head(params: HeadParams, n_blocks: int | None = None,
                   block_dim: int | None = None) -> AttributionRow:
    if n_blocks is None and block_dim is None:
        if params.in_dim % 1024 == 0:
            n_blocks, block_dim = params.in_dim // 1024, 1024
        else:
            raise ValueError("cannot infer block layout; pass n_blocks/block_dim")
    elif n_blocks is not None and block_dim is None:
        if params.in_dim % n_blocks:
            raise ValueError(f"in_dim {params.in_dim} not divisible by {n_blocks}")
        block_dim = params.in_dim // n_blocks
    elif n_blocks is None:
        n_blocks = params.in_dim // block_dim
    return AttributionRow(params.factor, attribute(params.W1, n_blocks, block_dim))


def render_attribution_table(rows: Sequence[AttributionRow],
                             labels: Sequence[str] | None = None) -> str:
    """Aligned text heatmap: rows = heads, columns = layer blocks."""
    if not rows:
        raise ValueError("no attribution rows")
    n_blocks = len(rows[0].fractions)
    if labels is None:
        labels = (DEFAULT_LAYER_LABELS if n_blocks == len(DEFAULT_LAYER_LABELS)
                  else tuple(f"b{i}" for i in range(n_blocks)))
    width = max(8, max(len(r.factor or "head") for r in rows) + 2)
    out = ["head".ljust(width) + "".join(f"{lab:>9}" for lab in labels)]
    out.append("-" * len(out[0]))
    for r in rows:
        name = r.factor or "head"
        out.append(name.ljust(width) + "".join(f"{v:9.3f}" for v in r.fractions))
    return "\n".join(out) + "\n"
