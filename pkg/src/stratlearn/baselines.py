"""Classical kNN-based local dimension estimators: Levina-Bickel MLE and local PCA."""

import numpy as np

from .errors import ConfigError


class KnnIndex:
    """Exact brute-force k-nearest-neighbour search (Euclidean)."""

    def __init__(self, points, chunk=1024):
        self.points = np.asarray(points, dtype=float)
        self.sq = np.einsum("ij,ij->i", self.points, self.points)
        self.chunk = chunk

    def __len__(self):
        return self.points.shape[0]

    def query(self, queries, k, exclude_self=False):
        """Return ``(distances, indices)``, each ``(m, k)``, distances ascending.

        With ``exclude_self`` the queries must be the indexed points themselves
        (same order); each point is then dropped from its own neighbour list.
        """
        q = np.asarray(queries, dtype=float)
        n = len(self)
        if not 1 <= k < n + (0 if exclude_self else 1):
            raise ConfigError(f"k={k} invalid for {n} points")
        dists = np.empty((q.shape[0], k))
        idx = np.empty((q.shape[0], k), dtype=int)
        for s in range(0, q.shape[0], self.chunk):
            block = q[s:s + self.chunk]
            d2 = self.sq[None, :] - 2.0 * block @ self.points.T + np.einsum("ij,ij->i", block, block)[:, None]
            np.maximum(d2, 0.0, out=d2)
            if exclude_self:
                rows = np.arange(block.shape[0])
                d2[rows, s + rows] = np.inf
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
            # recompute the selected distances directly, then sort
            exact = np.linalg.norm(self.points[part] - block[:, None, :], axis=2)
            order = np.argsort(exact, axis=1, kind="stable")
            dists[s:s + block.shape[0]] = np.take_along_axis(exact, order, axis=1)
            idx[s:s + block.shape[0]] = np.take_along_axis(part, order, axis=1)
        return dists, idx


def levina_bickel(points, k=20, index=None):
    """Per-point MLE ``[1/(k-1) sum_{j<k} log(T_k / T_j)]^-1``.

    Points with a zero neighbour distance (duplicates) get NaN.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 2 <= k < n:
        raise ConfigError(f"need 2 <= k < n, got k={k}, n={n}")
    index = index or KnnIndex(points)
    dist, _ = index.query(points, k, exclude_self=True)
    out = np.full(n, np.nan)
    ok = dist[:, 0] > 0
    logs = np.log(dist[ok, -1:] / dist[ok, :-1])
    with np.errstate(divide="ignore"):
        # equidistant neighbours give an infinite estimate
        out[ok] = 1.0 / np.mean(logs, axis=1)
    return out


def round_half_up(x, lo=1, hi=None):
    """Round real-valued estimates to integers (NaN stays NaN as -1)."""
    x = np.asarray(x, dtype=float)
    r = np.floor(x + 0.5)
    r = np.clip(r, lo, hi if hi is not None else np.inf)
    return np.where(np.isfinite(x), r, -1).astype(int)


def local_pca(points, k=20, var_threshold=0.95, index=None):
    """Smallest number of neighbour-covariance eigenvalues explaining
    ``var_threshold`` of the variance; 0 where the neighbourhood is degenerate."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if k < 2 or k >= n:
        raise ConfigError(f"need 2 <= k < n, got k={k}, n={n}")
    if not 0 < var_threshold <= 1:
        raise ConfigError("var_threshold must lie in (0, 1]")
    index = index or KnnIndex(points)
    _, nbr = index.query(points, k, exclude_self=True)
    out = np.zeros(n, dtype=int)
    for s in range(0, n, 2048):
        nb = points[nbr[s:s + 2048]]
        nb = nb - nb.mean(axis=1, keepdims=True)
        cov = np.swapaxes(nb, 1, 2) @ nb / (k - 1)
        ev = np.linalg.eigvalsh(cov)[:, ::-1]
        ev = np.where(ev > 1e-12 * ev[:, :1], ev, 0.0)
        total = ev.sum(axis=1)
        frac = np.cumsum(ev, axis=1) / np.where(total > 0, total, 1.0)[:, None]
        d = np.argmax(frac >= var_threshold - 1e-12, axis=1) + 1
        out[s:s + 2048] = np.where(total > 0, d, 0)
    return out


def summary(values):
    """Mean, median, IQR (linear interpolation) and mode of finite estimates."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"n": 0, "mean": None, "median": None, "iqr": None, "mode": None}
    q1, q3 = np.percentile(v, [25, 75])
    vals, counts = np.unique(np.floor(v + 0.5), return_counts=True)
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "median": float(np.median(v)),
        "iqr": [float(q1), float(q3)],
        "mode": int(vals[np.argmax(counts)]),
    }
