"""VP (Ornstein-Uhlenbeck) diffusion: schedule, eps-prediction training,
score evaluation, analytic Gaussian-strata score and reverse-SDE sampling."""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NumericError, ShapeError
from .nn import AdamState, MlpParams, adam_step, mlp_backward, mlp_forward, mlp_init
from .rng import derive_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear drift beta(t) = beta_min + (beta_max - beta_min) t / T."""

    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0 and self.T > 0):
            raise ConfigError("schedule constants must be positive")

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * np.asarray(t) / self.T

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t / self.T

    def moments(self, t):
        """``(m_t, sigma_t)`` with ``m_t = exp(-int_0^t beta)``, ``sigma_t^2 = 1 - m_t^2``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.T):
            raise ConfigError(f"t outside [0, {self.T}]")
        a = self.integral(t)
        return np.exp(-a), np.sqrt(-np.expm1(-2.0 * a))


def schedule_moments(schedule, t):
    return schedule.moments(t)


def perturb(x0, t, schedule, seed):
    """Forward-process sample ``x_t = m_t x0 + sigma_t eps``; returns ``(x_t, eps)``."""
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(x0.shape)
    m, s = schedule.moments(t)
    if np.ndim(m):
        m, s = m[..., None], s[..., None]
    return m * x0 + s * eps, eps


@dataclass
class TrainConfig:
    steps: int = 20000
    batch: int = 256
    lr: float = 1e-3
    lr_final: Optional[float] = None  # cosine decay to this value if set
    t_floor: float = 1e-4
    widths: Sequence[int] = (512, 512, 512)
    time_embed: Sequence[int] = (64, 64)
    seed: int = 0
    log_every: int = 1000


@dataclass
class DiffusionModel:
    eps_net: MlpParams
    time_embed: MlpParams
    schedule: NoiseSchedule
    data_dim: int
    loss_trace: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.eps_net.in_dim != self.data_dim + self.time_embed.out_dim:
            raise ShapeError("eps_net input size must equal data_dim + time embedding size")
        if self.eps_net.out_dim != self.data_dim:
            raise ShapeError("eps_net output size must equal data_dim")

    def arrays(self):
        return self.eps_net.arrays() + self.time_embed.arrays()

    def _forward(self, x, t):
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        emb, emb_cache = mlp_forward(self.time_embed, t[:, None])
        out, cache = mlp_forward(self.eps_net, np.concatenate([x, emb], axis=1))
        return out, cache, emb_cache

    def eps(self, x, t):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._forward(x, t)[0]

    def score(self, x, t):
        """Tweedie: score ~= -eps_theta(x, t) / sigma_t."""
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ConfigError("score requested at t <= 0")
        x2 = np.atleast_2d(np.asarray(x, dtype=float))
        _, s = self.schedule.moments(t)
        s = np.broadcast_to(s, (x2.shape[0],))[:, None]
        out = -self.eps(x2, t) / s
        return out[0] if np.ndim(x) == 1 else out

    def loss_and_grads(self, x0, t, eps):
        """Mean squared eps error over batch and coordinates, with gradients."""
        m, s = self.schedule.moments(t)
        xt = m[:, None] * x0 + s[:, None] * eps
        out, cache, emb_cache = self._forward(xt, t)
        diff = out - eps
        loss = float(np.mean(diff * diff))
        g_out = 2.0 * diff / diff.size
        g_net, g_in = mlp_backward(self.eps_net, cache, g_out)
        g_emb, _ = mlp_backward(self.time_embed, emb_cache, g_in[:, self.data_dim:])
        return loss, g_net + g_emb

    def to_dict(self):
        return {
            "eps_net": self.eps_net.to_dict(),
            "time_embed": self.time_embed.to_dict(),
            "schedule": asdict(self.schedule),
            "data_dim": self.data_dim,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MlpParams.from_dict(d["eps_net"]), MlpParams.from_dict(d["time_embed"]),
                   NoiseSchedule(**d["schedule"]), int(d["data_dim"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_diffusion(data_dim, config, schedule=None):
    emb_sizes = [1] + list(config.time_embed)
    emb = mlp_init(emb_sizes, "relu", seed=derive_rng(config.seed, "init-time").integers(2**63))
    sizes = [data_dim + emb_sizes[-1]] + list(config.widths) + [data_dim]
    net = mlp_init(sizes, "relu", seed=derive_rng(config.seed, "init-eps").integers(2**63))
    return DiffusionModel(net, emb, schedule or NoiseSchedule(), data_dim)


def train_diffusion(dataset, config=None, schedule=None, model=None):
    """Fit an eps-prediction network by minibatch Adam.

    ``t`` is drawn from ``Uniform(t_floor, T)`` for each example. The per-step
    loss is appended to ``model.loss_trace``.
    """
    config = config or TrainConfig()
    x = np.asarray(getattr(dataset, "points", dataset), dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("training data must be a nonempty 2-D array")
    model = model or init_diffusion(x.shape[1], config, schedule)
    sched = model.schedule
    rng = derive_rng(config.seed, "train-diffusion")
    arrays = model.arrays()
    state = AdamState.for_arrays(arrays, lr=config.lr)
    for step in range(config.steps):
        idx = rng.integers(0, x.shape[0], config.batch)
        t = rng.uniform(config.t_floor, sched.T, config.batch)
        eps = rng.standard_normal((config.batch, x.shape[1]))
        loss, grads = model.loss_and_grads(x[idx], t, eps)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite diffusion loss at step {step}")
        model.loss_trace.append(loss)
        lr = config.lr
        if config.lr_final is not None:
            frac = step / max(config.steps - 1, 1)
            lr = config.lr_final + 0.5 * (config.lr - config.lr_final) * (1 + np.cos(np.pi * frac))
        adam_step(arrays, grads, state, lr=lr)
        if config.log_every and (step + 1) % config.log_every == 0:
            log.info("diffusion step %d loss %.5f", step + 1,
                     np.mean(model.loss_trace[-config.log_every:]))
    return model


@dataclass
class GaussianComponent:
    weight: float
    offset: np.ndarray  # (D,)
    basis: np.ndarray  # (D, d), orthonormal columns; d may be 0
    intrinsic_cov: np.ndarray  # (d, d)


@dataclass
class GaussianStrataMixture:
    """Mixture of degenerate Gaussians on affine strata, plus isotropic noise.

    Under the forward process component k has marginal
    ``N(m mu_k, m^2 (U_k S_k U_k^T + noise^2 I) + sigma_t^2 I)``, so the
    score of the mixture is available in closed form.
    """

    components: List[GaussianComponent]
    noise_sigma: float = 0.0
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    def __post_init__(self):
        w = np.array([c.weight for c in self.components])
        if np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ConfigError("component weights must be positive and sum to 1")
        comps = []
        for c in self.components:
            off = np.asarray(c.offset, float)
            basis = np.asarray(c.basis, float).reshape(off.shape[0], -1) if np.size(c.basis) else np.zeros((off.shape[0], 0))
            d = basis.shape[1]
            cov = np.asarray(c.intrinsic_cov, float).reshape(d, d) if d else np.zeros((0, 0))
            comps.append(GaussianComponent(c.weight, off, basis, cov))
        self.components = comps
        for c in self.components:
            u = c.basis
            if not np.allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-10, rtol=0):
                raise ConfigError("component basis is not orthonormal")

    @property
    def data_dim(self):
        return self.components[0].offset.shape[0]

    @classmethod
    def from_spec(cls, spec, schedule=None):
        comps = []
        for w, s in zip(spec.weights, spec.strata):
            if s.kind != "affine_gaussian":
                raise ConfigError("oracle scores exist only for affine_gaussian strata")
            p = s.params
            off = np.asarray(p["offset"], float)
            if s.translation is not None:
                off = off + np.asarray(s.translation, float)
            comps.append(GaussianComponent(w, off, np.asarray(p["basis"], float),
                                           np.asarray(p["intrinsic_cov"], float)))
        return cls(comps, spec.noise_sigma, schedule or NoiseSchedule())

    def _component_terms(self, x, t):
        """Per-component log-densities (n, K) and scores (K, n, D)."""
        m, s = self.schedule.moments(t)
        m = np.broadcast_to(m, (x.shape[0],))
        s = np.broadcast_to(s, (x.shape[0],))
        iso = m**2 * self.noise_sigma**2 + s**2  # variance off the stratum
        D = x.shape[1]
        logps, scores = [], []
        for c in self.components:
            d = c.basis.shape[1]
            y = x - m[:, None] * c.offset
            coef = y @ c.basis  # (n, d)
            perp = y - coef @ c.basis.T
            # (n, d, d) in-stratum covariance and its solve
            inner = m[:, None, None] ** 2 * c.intrinsic_cov + iso[:, None, None] * np.eye(d)
            if d:
                chol = np.linalg.cholesky(inner)
                sol = np.linalg.solve(inner, coef[..., None])[..., 0]
                logdet_in = 2 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
                quad_in = np.einsum("ni,ni->n", coef, sol)
            else:
                sol = coef
                logdet_in = np.zeros(x.shape[0])
                quad_in = np.zeros(x.shape[0])
            quad = quad_in + np.einsum("ni,ni->n", perp, perp) / iso
            logdet = logdet_in + (D - d) * np.log(iso)
            logps.append(np.log(c.weight) - 0.5 * (quad + logdet + D * np.log(2 * np.pi)))
            scores.append(-(perp / iso[:, None] + sol @ c.basis.T))
        return np.stack(logps, axis=1), np.stack(scores)

    def log_density(self, x, t):
        x2 = np.atleast_2d(np.asarray(x, float))
        lp, _ = self._component_terms(x2, t)
        out = logsumexp(lp, axis=1)
        return out[0] if np.ndim(x) == 1 else out

    def responsibilities(self, x, t):
        x2 = np.atleast_2d(np.asarray(x, float))
        lp, _ = self._component_terms(x2, t)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def score(self, x, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0):
            raise ConfigError("score requested at t <= 0")
        x2 = np.atleast_2d(np.asarray(x, float))
        lp, comp = self._component_terms(x2, t)
        r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
        out = np.einsum("nk,knd->nd", r, comp)
        return out[0] if np.ndim(x) == 1 else out


def score_at(source, x, t):
    """Score of either a trained ``DiffusionModel`` or a ``GaussianStrataMixture``."""
    return source.score(x, t)


@dataclass
class ReverseSamples:
    samples: np.ndarray  # truncated rows are zeroed
    kept: np.ndarray  # False where ||y||_inf exceeded the truncation level


def sample_reverse(source, n, steps=1000, tau=1e-3, trunc_L=None, seed=0, schedule=None):
    """Euler-Maruyama integration of the reverse SDE from N(0, I) to time tau.

    Rows whose sup-norm exceeds ``trunc_L`` are zeroed and marked in ``kept``.
    """
    sched = schedule or source.schedule
    if not 0 < tau < sched.T:
        raise ConfigError("tau must lie in (0, T)")
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    D = source.data_dim
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((n, D))
    if n == 0:
        return ReverseSamples(y, np.ones(0, dtype=bool))
    dt = (sched.T - tau) / steps
    for k in range(steps):
        s = sched.T - k * dt  # forward time
        b = float(sched.beta(s))
        drift = b * y + 2.0 * b * source.score(y, s)
        y = y + drift * dt + np.sqrt(2.0 * b * dt) * rng.standard_normal(y.shape)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite reverse-SDE state at step {k}; try a larger tau")
    kept = np.ones(n, dtype=bool)
    if trunc_L is not None:
        kept = np.max(np.abs(y), axis=1) <= trunc_L
        y[~kept] = 0.0
    return ReverseSamples(y, kept)
