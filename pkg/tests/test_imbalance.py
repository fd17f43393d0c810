import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sapa.imbalance import ResampleConfig, nearest_neighbors, smote, smote_with_parents


@st.composite
def imbalanced(draw):
    n_min = draw(st.integers(6, 20))
    n_maj = draw(st.integers(n_min, 60))
    d = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**16))
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_min + n_maj, d)).round(3)
    y = np.array([1] * n_min + [0] * n_maj)
    perm = rng.permutation(len(y))
    ratio = draw(st.sampled_from([0.5, 0.8, 1.0]))
    return X[perm], y[perm], ResampleConfig(k_neighbors=5, target_ratio=ratio, seed=seed)


@settings(max_examples=500)
@given(imbalanced())
def test_synthetic_rows_lie_on_neighbor_segments(case):
    X, y, cfg = case
    res = smote_with_parents(X, y, cfg)
    n = len(y)
    np.testing.assert_array_equal(res.features[:n], X)
    np.testing.assert_array_equal(res.labels[:n], y)
    new = res.features[n:]
    assert np.all(res.labels[n:] == 1)
    assert np.all((res.lam >= 0) & (res.lam < 1))
    a, b = X[res.base_index], X[res.neighbor_index]
    np.testing.assert_allclose(new, a + res.lam[:, None] * (b - a), atol=1e-12)
    assert np.all(y[res.base_index] == 1) and np.all(y[res.neighbor_index] == 1)
    # neighbor is among the base point's k nearest minority points
    mins = np.flatnonzero(y == 1)
    nn = nearest_neighbors(X[mins], cfg.k_neighbors)
    pos = {int(r): i for i, r in enumerate(mins)}
    for bi, ni in zip(res.base_index, res.neighbor_index):
        assert pos[int(ni)] in nn[pos[int(bi)]]
    # class ratio reached
    n_min_after = int((res.labels == 1).sum())
    n_maj = int((y == 0).sum())
    assert n_min_after >= cfg.target_ratio * n_maj - 1e-9
    assert n_min_after == max(int((y == 1).sum()), int(np.ceil(cfg.target_ratio * n_maj)))


def test_seeded_determinism():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    y = np.array([1] * 8 + [0] * 42)
    a = smote(X, y, ResampleConfig(seed=3))
    b = smote(X, y, ResampleConfig(seed=3))
    np.testing.assert_array_equal(a[0], b[0])


def test_too_few_minority_rows():
    X = np.arange(20, dtype=float).reshape(10, 2)
    y = np.array([1] * 3 + [0] * 7)
    with pytest.raises(ValueError, match="k_neighbors"):
        smote(X, y)


def test_missing_values_rejected():
    X = np.ones((10, 2))
    X[0, 0] = np.nan
    with pytest.raises(ValueError, match="missing"):
        smote(X, np.array([1] * 6 + [0] * 4))


def test_already_balanced_is_noop():
    X = np.arange(12, dtype=float).reshape(6, 2)
    y = np.array([1, 0, 1, 0, 1, 0])
    Xo, yo = smote(X, y)
    assert Xo.shape == X.shape


def test_two_point_segment():
    X = np.array([[0.0, 0.0], [2.0, 2.0], [5.0, 5.0], [6.0, 6.0], [7.0, 7.0]])
    y = np.array([1, 1, 0, 0, 0])
    res = smote_with_parents(X, y, ResampleConfig(k_neighbors=1, target_ratio=1.0, seed=0))
    new = res.features[5:]
    assert new.shape == (1, 2)
    t = new[0, 0]
    assert new[0, 1] == t and 0.0 <= t <= 2.0


def test_synthetic_count_arithmetic():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(110, 3))
    y = np.array([1] * 10 + [0] * 100)
    Xo, yo = smote(X, y)
    assert len(yo) - len(y) == 90 and (yo == 1).sum() == 100
