"""Local intrinsic dimension from the spectrum of sampled score vectors,
strata counting by histogram thresholding, and confusion reporting."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, NumericError
from .rng import derive_rng


@dataclass
class LidConfig:
    t_start: float = 0.03
    t_end: float = 0.031
    N: int = 500
    rule: str = "ratio"  # "ratio" | "gap"
    floor_eps: float = 1e-6
    alpha: float = 0.01
    seed: int = 0
    chunk: int = 32  # points per batched score call

    def validate(self, D=None, T=1.0):
        if not 0 < self.t_start < self.t_end <= T:
            raise ConfigError("need 0 < t_start < t_end <= T")
        if self.rule not in ("ratio", "gap"):
            raise ConfigError(f"unknown rule {self.rule!r}")
        if self.floor_eps <= 0:
            raise ConfigError("floor_eps must be positive")
        if not 0 <= self.alpha < 1:
            raise ConfigError("alpha must lie in [0, 1)")
        if D is not None and self.N < D:
            raise ConfigError(f"N={self.N} must be at least the ambient dimension {D}")


def _draw(source, x0, config, rng):
    t = rng.uniform(config.t_start, config.t_end, config.N)
    m, s = source.schedule.moments(t)
    xt = m[:, None] * x0 + s[:, None] * rng.standard_normal((config.N, x0.shape[0]))
    return xt, t


def score_matrix(source, x0, config, rng=None):
    """D x N matrix of scores at points diffused from ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    rng = rng if rng is not None else derive_rng(config.seed, "lid", 0)
    xt, t = _draw(source, x0, config, rng)
    return source.score(xt, t).T


def singular_values(matrix):
    """Descending singular values via eigenvalues of the Gram matrix ``S S^T``."""
    s = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(s)):
        raise NumericError("non-finite entries in score matrix")
    ev = np.linalg.eigvalsh(s @ np.swapaxes(s, -1, -2))
    return np.sqrt(np.clip(ev, 0.0, None))[..., ::-1]


def lid_gap(svals, D=None):
    """``D - argmax_i (s_i - s_{i+1})``, i in 1..D-1, first index on ties."""
    s = np.asarray(svals, dtype=float)
    D = s.shape[-1] if D is None else D
    return D - (np.argmax(s[..., :-1] - s[..., 1:], axis=-1) + 1)


def lid_ratio(svals, D=None, floor_eps=1e-6):
    """``D - argmax_i s_i / max(s_{i+1}, floor_eps)``, first index on ties."""
    s = np.asarray(svals, dtype=float)
    D = s.shape[-1] if D is None else D
    return D - (np.argmax(s[..., :-1] / np.maximum(s[..., 1:], floor_eps), axis=-1) + 1)


def _dims_from_svals(svals, config):
    if config.rule == "gap":
        return lid_gap(svals)
    return lid_ratio(svals, floor_eps=config.floor_eps)


def point_svals(source, points, config, start=0):
    """Singular values for each row of ``points``; row i uses stream ``start + i``."""
    points = np.asarray(points, dtype=float)
    n, D = points.shape
    xs, ts = [], []
    for i in range(n):
        xt, t = _draw(source, points[i], config, derive_rng(config.seed, "lid", start + i))
        xs.append(xt)
        ts.append(t)
    if n == 0:
        return np.zeros((0, D))
    sc = source.score(np.concatenate(xs), np.concatenate(ts)).reshape(n, config.N, D)
    return singular_values(np.swapaxes(sc, 1, 2))


def estimate_dims(source, dataset, config, threads=1, return_svals=False):
    """Per-point dimension estimates. Results do not depend on ``threads``."""
    points = np.asarray(getattr(dataset, "points", dataset), dtype=float)
    n = points.shape[0]
    if n == 0:
        empty = np.zeros(0, dtype=int)
        return (empty, np.zeros((0, 0))) if return_svals else empty
    config.validate(points.shape[1], source.schedule.T)
    starts = range(0, n, config.chunk)
    work = lambda s: point_svals(source, points[s:s + config.chunk], config, s)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    svals = np.concatenate(parts)
    dims = _dims_from_svals(svals, config).astype(int)
    return (dims, svals) if return_svals else dims


@dataclass
class LidReport:
    per_point_dim: np.ndarray
    dim_counts: Dict[int, int]
    kept_dims: List[int]
    K_hat: int
    alpha: float
    accuracy: Optional[float] = None
    confusion: Optional[np.ndarray] = None  # rows: true dims, cols: buckets + "Other"
    confusion_rows: Optional[List[int]] = None
    confusion_cols: Optional[List[str]] = None

    def to_dict(self):
        d = {
            "dim_counts": {str(k): int(v) for k, v in sorted(self.dim_counts.items())},
            "kept_dims": [int(k) for k in self.kept_dims],
            "K_hat": int(self.K_hat),
            "alpha": self.alpha,
            "accuracy": self.accuracy,
        }
        if self.confusion is not None:
            d["confusion"] = {
                "rows": [int(r) for r in self.confusion_rows],
                "cols": list(self.confusion_cols),
                "counts": self.confusion.astype(int).tolist(),
            }
        return d


def strata_report(per_point_dim, alpha=0.01, truth=None, buckets=None):
    """Histogram the estimates and keep dimensions with mass >= alpha.

    With ``truth``, also computes accuracy and a confusion matrix whose rows are
    the true dimensions and whose columns are ``buckets`` (default: the true
    dimensions) plus a final "Other" column.
    """
    dims = np.asarray(per_point_dim, dtype=int)
    n = dims.size
    values, counts = np.unique(dims, return_counts=True)
    dim_counts = {int(v): int(c) for v, c in zip(values, counts)}
    kept = sorted(d for d, c in dim_counts.items() if n and c / n >= alpha)
    report = LidReport(dims, dim_counts, kept, len(kept), alpha)
    if truth is not None:
        truth = np.asarray(truth, dtype=int)
        if truth.shape != dims.shape:
            raise ConfigError("truth and estimates differ in length")
        report.accuracy = float(np.mean(dims == truth)) if n else float("nan")
        rows = sorted(set(truth.tolist()))
        cols = sorted(set(buckets if buckets is not None else rows))
        conf = np.zeros((len(rows), len(cols) + 1), dtype=int)
        col_index = {c: j for j, c in enumerate(cols)}
        for i, tr in enumerate(rows):
            for e in dims[truth == tr]:
                conf[i, col_index.get(int(e), len(cols))] += 1
        report.confusion = conf
        report.confusion_rows = rows
        report.confusion_cols = [str(c) for c in cols] + ["Other"]
    return report


def table1_row(per_point_dim, truth, window):
    """Percentages of estimates at 1, 2, 3, 4+ and accuracy, Table-1 style."""
    dims = np.asarray(per_point_dim)
    n = max(dims.size, 1)
    pct = lambda mask: 100.0 * np.count_nonzero(mask) / n
    return {
        "window": f"[{window[0]:.3f},{window[1]:.3f}]",
        "dim1_pct": pct(dims == 1),
        "dim2_pct": pct(dims == 2),
        "dim3_pct": pct(dims == 3),
        "dim4plus_pct": pct(dims >= 4),
        "accuracy": 100.0 * float(np.mean(dims == np.asarray(truth))) if dims.size else float("nan"),
    }


TABLE1_COLUMNS = ["window", "dim1_pct", "dim2_pct", "dim3_pct", "dim4plus_pct", "accuracy"]
