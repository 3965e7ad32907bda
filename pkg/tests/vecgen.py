"""Shared helper: random embedding records for store-level tests."""

import numpy as np

from merit.store import EmbeddingRecord


def random_records(rng, n, dim, prefix="clip"):
    return [
        EmbeddingRecord(f"{prefix}{i:04d}",
                        rng.standard_normal(dim).astype(np.float32))
        for i in range(n)
    ]
