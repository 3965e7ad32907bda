import numpy as np
import pytest

from merit.store import EmbeddingStore

from vecgen import random_records


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_store(rng):
    return EmbeddingStore.from_records(random_records(rng, 30, 16))


@pytest.fixture(scope="session")
def tiny_synth():
    """Small planted-factor dataset shared by trainer/evaluator tests."""
    from merit.synth import SynthConfig, generate

    cfg = SynthConfig(n_folders=40, k=2, in_dim=64, factor_subspace_dim=8,
                      noise_sigma=0.02, seed=7)
    result = generate(cfg)
    return cfg, result, result.store()
