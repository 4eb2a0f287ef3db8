import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from woundfill.knn import build_knn, knn_oracle


def test_hand_example_with_tie():
    # node 0 has nodes 1 and 2 at the same distance; the lower index wins
    x = np.array([[0.0], [1.0], [-1.0], [5.0]])
    g = build_knn(x, 2)
    assert g.neighbors.tolist() == [[1, 2], [0, 2], [0, 1], [1, 0]]


def test_matches_oracle_on_random_data():
    rng = np.random.default_rng(0)
    for d in (3, 12, 64):
        x = rng.normal(size=(120, d))
        assert build_knn(x, 7) == knn_oracle(x, 7)


def test_matches_oracle_with_heavy_ties():
    x = np.random.default_rng(1).integers(0, 3, size=(300, 3)).astype(float)
    assert build_knn(x, 10) == knn_oracle(x, 10)


def test_float32_input_matches_oracle():
    x = np.random.default_rng(2).normal(size=(400, 12)).astype(np.float32)
    assert build_knn(x, 8) == knn_oracle(x, 8)


@pytest.mark.parametrize("bad_k", [0, 5, -1, 2.5, True])
def test_rejects_invalid_k(bad_k):
    with pytest.raises(ValueError):
        build_knn(np.zeros((5, 2)), bad_k)


def test_rejects_non_finite():
    x = np.zeros((4, 2))
    x[1, 1] = np.nan
    with pytest.raises(ValueError):
        build_knn(x, 1)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(2, 40).flatmap(
        lambda m: st.tuples(
            arrays(np.float64, (m, 3), elements=st.floats(-4, 4, allow_nan=False, width=16)),
            st.integers(1, m - 1),
        )
    )
)
def test_graph_invariants(args):
    x, k = args
    g = build_knn(x, k)
    assert g == knn_oracle(x, k)
    m = len(x)
    for i, row in enumerate(g.neighbors):
        assert i not in row
        assert len(set(row.tolist())) == k
        d = ((x[row] - x[i]) ** 2).sum(1)
        assert np.all(np.diff(d) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(-3, 3))
def test_translation_leaves_graph_unchanged(seed, shift):
    # integer-valued rows keep the shifted distances exact
    x = np.random.default_rng(seed).integers(-20, 20, size=(50, 4)).astype(float)
    assert build_knn(x, 5) == build_knn(x + shift, 5)
