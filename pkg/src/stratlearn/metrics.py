"""Distribution and clustering metrics."""

import itertools

import numpy as np

from .errors import ConfigError


def w1_1d(a, b):
    """Exact W1 between two equal-size empirical measures on the line."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size != b.size or a.size == 0:
        raise ConfigError(f"w1_1d needs equal nonempty sizes, got {a.size} and {b.size}")
    return float(np.mean(np.abs(a - b)))


def random_directions(n_projections, dim, seed):
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((n_projections, dim))
    return theta / np.linalg.norm(theta, axis=1, keepdims=True)


def match_sizes(X, Y, seed=0):
    """Subsample the larger set (without replacement) to the smaller size."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    rng = np.random.default_rng(seed)
    if X.shape[0] > Y.shape[0]:
        X = X[np.sort(rng.choice(X.shape[0], Y.shape[0], replace=False))]
    elif Y.shape[0] > X.shape[0]:
        Y = Y[np.sort(rng.choice(Y.shape[0], X.shape[0], replace=False))]
    return X, Y


def sliced_w1(X, Y, n_projections=128, seed=0, directions=None):
    """Mean over random unit directions of the 1-D W1 between projections."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if X.shape != Y.shape:
        raise ConfigError(f"sliced_w1 needs equal shapes, got {X.shape} and {Y.shape}")
    if n_projections < 1:
        raise ConfigError("n_projections must be >= 1")
    theta = random_directions(n_projections, X.shape[1], seed) if directions is None else directions
    px = np.sort(X @ theta.T, axis=0)
    py = np.sort(Y @ theta.T, axis=0)
    return float(np.mean(np.abs(px - py)))


def label_accuracy(pred, truth):
    """Best agreement over relabelings of ``pred``.

    Returns ``(accuracy, perm)`` where ``perm[j]`` is the truth label assigned
    to predicted label ``j + 1``.
    """
    pred = np.asarray(pred, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if pred.shape != truth.shape:
        raise ConfigError("pred and truth differ in length")
    K = int(max(pred.max(initial=1), truth.max(initial=1)))
    if K > 8:
        raise ConfigError(f"label_accuracy searches permutations only up to K=8, got {K}")
    table = np.zeros((K, K), dtype=int)
    np.add.at(table, (pred - 1, truth - 1), 1)
    best, best_perm = -1, None
    for perm in itertools.permutations(range(K)):
        hits = table[np.arange(K), perm].sum()
        if hits > best:
            best, best_perm = hits, perm
    acc = best / pred.size if pred.size else float("nan")
    return float(acc), tuple(p + 1 for p in best_perm)
