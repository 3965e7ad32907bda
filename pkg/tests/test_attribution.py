import numpy as np
import pytest

from merit.attribution import (AttributionRow, attribute, attribute_head,
                               render_attribution_table)
from merit.head import init_head


def test_uniform_matrix_exact_fifths():
    for value in (1.0, 0.3, -2.5):
        fractions = attribute(np.full((64, 5 * 32), value), 5, 32)
        assert fractions.tolist() == [0.2, 0.2, 0.2, 0.2, 0.2]


def test_single_block_one_hot():
    W1 = np.zeros((16, 5 * 8))
    W1[:, 4 * 8:] = 3.0
    assert attribute(W1, 5, 8).tolist() == [0.0, 0.0, 0.0, 0.0, 1.0]


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        W1 = rng.standard_normal((24, 5 * 16))
        fractions = attribute(W1, 5, 16)
        norms = np.array([np.sqrt(np.sum(W1[:, i * 16:(i + 1) * 16] ** 2))
                          for i in range(5)])
        oracle = norms / norms.sum()
        assert np.abs(fractions - oracle).max() < 1e-12
        assert abs(fractions.sum() - 1.0) < 1e-9
        assert np.all(fractions >= 0.0)


def test_block_scaling_covariance():
    rng = np.random.default_rng(2)
    W1 = rng.standard_normal((8, 4 * 6))
    base = attribute(W1, 4, 6)
    W2 = W1.copy()
    W2[:, 6:12] *= 3.0
    scaled = attribute(W2, 4, 6)
    assert scaled[1] > base[1]
    for i in (0, 2, 3):
        assert scaled[i] <= base[i]


def test_column_permutation_within_block_invariant():
    rng = np.random.default_rng(3)
    W1 = rng.standard_normal((8, 3 * 5))
    base = attribute(W1, 3, 5)
    W2 = W1.copy()
    W2[:, 5:10] = W2[:, [9, 7, 5, 8, 6]]
    assert np.array_equal(attribute(W2, 3, 5), base)


def test_dimension_mismatch_and_zero_errors():
    with pytest.raises(ValueError, match="columns"):
        attribute(np.ones((4, 10)), 3, 4)
    with pytest.raises(ValueError, match="all-zero"):
        attribute(np.zeros((4, 12)), 3, 4)


def test_attribute_head_inference():
    params = init_head(5 * 1024, 8, 4, seed=0, factor="melody")
    row = attribute_head(params)
    assert row.factor == "melody"
    assert len(row.fractions) == 5
    params2 = init_head(12, 4, 2, seed=0)
    with pytest.raises(ValueError, match="block layout"):
        attribute_head(params2)
    assert len(attribute_head(params2, n_blocks=3).fractions) == 3


def test_render_table():
    rows = [AttributionRow("melody", np.array([0.1, 0.1, 0.1, 0.1, 0.6])),
            AttributionRow("rhythm", np.array([0.4, 0.3, 0.1, 0.1, 0.1]))]
    table = render_attribution_table(rows)
    lines = table.splitlines()
    assert "23" in lines[0]  # default layer labels
    assert lines[2].startswith("melody")
    assert "0.600" in lines[2]
