import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratlearn import strata
from stratlearn.baselines import KnnIndex, levina_bickel, local_pca, round_half_up, summary
from stratlearn.errors import ConfigError


def brute_knn(points, i, k):
    d = np.array([np.sqrt(np.sum((points[j] - points[i]) ** 2)) if j != i else np.inf
                  for j in range(len(points))])
    order = np.argsort(d, kind="stable")[:k]
    return d[order], order


def test_knn_matches_brute_force():
    x = np.random.default_rng(0).standard_normal((60, 4))
    dist, idx = KnnIndex(x, chunk=7).query(x, 5, exclude_self=True)
    for i in range(60):
        d, o = brute_knn(x, i, 5)
        np.testing.assert_allclose(dist[i], d, rtol=1e-12)
        assert np.array_equal(idx[i], o)
    assert np.all(np.diff(dist, axis=1) >= 0)


def test_knn_validation():
    idx = KnnIndex(np.zeros((5, 2)))
    with pytest.raises(ConfigError):
        idx.query(np.zeros((5, 2)), 5, exclude_self=True)


def test_lb_grid_value():
    h = 0.3
    x = (h * np.arange(41.0))[:, None]
    lb = levina_bickel(x, k=3)
    # interior point: T = (h, h, 2h), mean log ratio = (2 log 2) / 2
    assert abs(lb[20] - 1 / np.log(2)) < 1e-12


def test_lb_duplicates_are_nan():
    x = np.array([[0.0], [0.0], [1.0], [2.0], [3.5]])
    lb = levina_bickel(x, k=2)
    assert np.isnan(lb[0]) and np.isnan(lb[1]) and np.isfinite(lb[3])
    assert round_half_up(lb)[0] == -1


def test_lb_validation():
    with pytest.raises(ConfigError):
        levina_bickel(np.zeros((5, 2)), k=5)
    with pytest.raises(ConfigError):
        levina_bickel(np.zeros((5, 2)), k=1)


def test_lb_circle():
    theta = np.random.default_rng(1).uniform(0, 2 * np.pi, 2000)
    x = np.stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)], axis=1)
    assert 0.9 <= np.mean(levina_bickel(x, 20)) <= 1.2


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_scale_invariance(seed, c):
    x = np.random.default_rng(seed).standard_normal((80, 3))
    np.testing.assert_allclose(levina_bickel(c * x, 10), levina_bickel(x, 10), rtol=1e-9)
    assert np.array_equal(local_pca(c * x, 10), local_pca(x, 10))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_isometry_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((80, 3))
    y = strata.embed(x, 6, seed) + rng.standard_normal(6)
    np.testing.assert_allclose(levina_bickel(y, 10), levina_bickel(x, 10), rtol=1e-8)
    assert np.array_equal(local_pca(y, 10), local_pca(x, 10))


def test_round_half_up():
    assert round_half_up([0.2, 1.5, 2.49, 7.0], lo=1, hi=5).tolist() == [1, 2, 2, 5]


def test_local_pca_collinear():
    x = np.zeros((30, 3))
    x[:, 0] = np.random.default_rng(2).uniform(-1, 1, 30)
    assert np.all(local_pca(x, 10) == 1)


@pytest.mark.parametrize("thr", [0.5, 0.95, 1.0])
def test_local_pca_plane(thr):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((40, 2)) @ np.array([[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]])
    d = local_pca(x, 39, thr)
    assert np.all(d <= 2)
    if thr == 1.0:
        assert np.all(d == 2)


def test_local_pca_degenerate():
    assert np.all(local_pca(np.ones((6, 2)), 3) == 0)


def test_local_pca_gaussian_blob():
    x = np.random.default_rng(4).standard_normal((2000, 3))
    assert np.mean(local_pca(x, 50, 0.95) == 3) >= 0.95


def test_local_pca_validation():
    with pytest.raises(ConfigError):
        local_pca(np.zeros((5, 2)), 3, 0.0)


def test_summary():
    s = summary([1.0, 2.0, 2.0, 3.0, np.nan])
    assert s["n"] == 4 and s["mean"] == 2.0 and s["median"] == 2.0
    assert s["iqr"] == [1.75, 2.25] and s["mode"] == 2
    assert summary([np.nan])["n"] == 0
