"""Scaled-down experiment recipes shared by scripts/ and the acceptance tests."""

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from . import baselines as bl
from . import lid, metrics, movae, strata
from .diffusion import TrainConfig, sample_reverse, train_diffusion
from .rng import derive_seed

log = logging.getLogger(__name__)


@dataclass
class Table1Recipe:
    noise_sigma: float = 0.0
    n: int = 4000
    ambient_dim: int = 20
    widths: Tuple[int, ...] = (256, 256, 256)
    steps: int = 20000
    batch: int = 1024
    lr: float = 3e-3
    lr_final: float = 1e-5
    windows: Sequence[Tuple[float, float]] = ((0.03, 0.031),)
    N: int = 500
    rule: str = "ratio"
    seed: int = 0


@dataclass
class Table1Result:
    rows: list
    dims: dict  # window -> per-point estimates
    dataset: strata.Dataset
    model: object
    times: dict = field(default_factory=dict)

    def accuracy(self, window):
        return float(np.mean(self.dims[tuple(window)] == self.dataset.true_dim))


def run_table1(recipe=None, threads=1):
    """Train a DDPM on circle/sphere in R^D and estimate per-point dims per window."""
    r = recipe or Table1Recipe()
    spec = strata.circle_sphere(noise_sigma=r.noise_sigma, ambient_dim=r.ambient_dim)
    ds = strata.sample_stratified(spec, r.n, derive_seed(r.seed, "data"))
    cfg = TrainConfig(steps=r.steps, batch=r.batch, lr=r.lr, lr_final=r.lr_final, widths=tuple(r.widths),
                      seed=derive_seed(r.seed, "train_diffusion"), log_every=max(r.steps // 10, 1))
    t0 = time.perf_counter()
    model = train_diffusion(ds, cfg)
    times = {"train": time.perf_counter() - t0}
    rows, dims = [], {}
    t0 = time.perf_counter()
    for w in r.windows:
        c = lid.LidConfig(w[0], w[1], r.N, r.rule, seed=derive_seed(r.seed, "lid"))
        d = lid.estimate_dims(model, ds, c, threads=threads)
        dims[tuple(w)] = d
        rows.append(lid.table1_row(d, ds.true_dim, w))
    times["lid"] = time.perf_counter() - t0
    return Table1Result(rows, dims, ds, model, times)


def baseline_accuracies(dataset, k=20, var_threshold=0.95):
    """Accuracy of rounded Levina-Bickel and local PCA against the true dims."""
    index = bl.KnnIndex(dataset.points)
    lb = bl.round_half_up(bl.levina_bickel(dataset.points, k, index), 1, dataset.points.shape[1])
    lp = bl.local_pca(dataset.points, k, var_threshold, index)
    return float(np.mean(lb == dataset.true_dim)), float(np.mean(lp == dataset.true_dim))


def run_movae_routing(n=3000, seed=0, hyper=None):
    """Train the mixture of VAEs on circle/plane; return (accuracy, result, dataset, seconds)."""
    ds = strata.sample_stratified(strata.circle_plane(), n, derive_seed(seed, "data"))
    t0 = time.perf_counter()
    res = movae.train_movae(ds, [1, 2], hyper or movae.MoVaeHyper(), derive_seed(seed, "movae"))
    acc, _ = metrics.label_accuracy(res.labels, ds.stratum_label)
    return acc, res, ds, time.perf_counter() - t0


@dataclass
class Figure5Recipe:
    sigmas: Sequence[float] = (0.0, 0.3)
    n: int = 1000
    n_eval: int = 2000
    # diffusion side
    widths: Tuple[int, ...] = (256, 256, 256)
    steps: int = 10000
    batch: int = 256
    lr: float = 1e-3
    sampler_steps: int = 500
    tau: float = 1e-3
    # mixture of VAEs side
    hidden: Tuple[int, ...] = (128, 128)
    epochs_phase1: int = 500
    epochs_phase2: int = 500
    n_projections: int = 128
    seed: int = 0


def run_figure5(recipe=None):
    """Sliced W1 to a clean intrinsic sample for both generators at each noise level.

    Returns rows ``(sigma, method, W1)``.
    """
    r = recipe or Figure5Recipe()
    rows = []
    for sigma in r.sigmas:
        spec = strata.helix_swissroll_r15(noise_sigma=sigma)
        ds = strata.sample_stratified(spec, r.n, derive_seed(r.seed, "data", int(round(1000 * sigma))))
        ref = strata.sample_stratified(strata.helix_swissroll_r15(noise_sigma=0.0), r.n_eval,
                                       derive_seed(r.seed, "reference")).points
        cfg = TrainConfig(steps=r.steps, batch=r.batch, lr=r.lr, lr_final=1e-5, widths=tuple(r.widths),
                          seed=derive_seed(r.seed, "train_diffusion"), log_every=max(r.steps // 5, 1))
        model = train_diffusion(ds, cfg)
        trunc = 2.0 * float(np.max(np.abs(ds.points)))
        out = sample_reverse(model, r.n_eval, r.sampler_steps, r.tau, trunc, derive_seed(r.seed, "sampler"))
        gen_d = out.samples[out.kept]
        hyper = movae.MoVaeHyper(hidden=tuple(r.hidden), epochs_phase1=r.epochs_phase1,
                                 epochs_phase2=r.epochs_phase2)
        res = movae.train_movae(ds, [1, 2], hyper, derive_seed(r.seed, "movae"))
        gen_v, _ = movae.movae_generate(res.model, r.n_eval, derive_seed(r.seed, "generate"))
        for name, gen in (("diffusion", gen_d), ("movae", gen_v)):
            x, y = metrics.match_sizes(gen, ref, derive_seed(r.seed, "subsample"))
            w1 = metrics.sliced_w1(x, y, r.n_projections, derive_seed(r.seed, "projections"))
            log.info("sigma %.2f %s sliced W1 %.4f", sigma, name, w1)
            rows.append((sigma, name, w1))
    return rows
