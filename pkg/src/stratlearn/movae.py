"""Stratified mixture of VAEs.

K experts, each an encoder/decoder pair with an assigned target dimension,
routed by a gating network. The per-sample, per-expert objective is

    l_k(x) = |x - x_k|^2 + beta KL(q_k(z|x) || N(0, I))
             - beta_g (log w_k - log h_k(x)) + gamma P_k(x)

and the batch loss is ``mean_x sum_k h_k(x) l_k(x)`` with ``w = softmax(pi)``.
P_k pushes the decoder Jacobian towards d_k unit singular values and zeros
elsewhere.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import ConfigError, NumericError
from .nn import (AdamState, MlpParams, adam_step, jacobian_tangents, jacobian_weight_grads,
                 mlp_backward, mlp_forward, mlp_init)
from .rng import derive_rng, derive_seed

log = logging.getLogger(__name__)


@dataclass
class Expert:
    encoder: MlpParams  # D -> 2 * latent (mean, log-variance)
    decoder: MlpParams  # latent -> D
    target_dim: int


@dataclass
class MoVaeModel:
    experts: List[Expert]
    gate: MlpParams  # D -> K logits
    mixture_logits: np.ndarray
    latent_dim: int

    @property
    def K(self):
        return len(self.experts)

    @property
    def data_dim(self):
        return self.gate.in_dim

    def expert_arrays(self):
        out = []
        for e in self.experts:
            out += e.encoder.arrays() + e.decoder.arrays()
        return out

    def arrays(self):
        return self.expert_arrays() + self.gate.arrays() + [self.mixture_logits]

    def mixture_weights(self):
        return softmax(self.mixture_logits)

    def to_dict(self):
        return {
            "latent_dim": self.latent_dim,
            "experts": [{"encoder": e.encoder.to_dict(), "decoder": e.decoder.to_dict(),
                         "target_dim": e.target_dim} for e in self.experts],
            "gate": self.gate.to_dict(),
            "mixture_logits": self.mixture_logits.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [Expert(MlpParams.from_dict(e["encoder"]), MlpParams.from_dict(e["decoder"]),
                    int(e["target_dim"])) for e in d["experts"]],
            MlpParams.from_dict(d["gate"]),
            np.asarray(d["mixture_logits"], dtype=float),
            int(d["latent_dim"]),
        )


@dataclass
class MoVaeHyper:
    beta: float = 0.01  # latent KL weight in phase 1
    beta_final: float = 0.5  # reached linearly by the end of phase 2
    beta_g: float = 0.01
    gamma: float = 3.0
    tau_start: float = 2.0
    tau_end: float = 0.1
    epochs_phase1: int = 2000
    epochs_phase2: int = 2000
    batch: int = 256
    lr: float = 1e-3
    recon_sigma: Optional[float] = None  # None: plain squared error
    latent_dim: int = 4
    hidden: Sequence[int] = (256, 256)
    gate_hidden: Sequence[int] = (128,)
    slope: float = 0.2

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ConfigError("need tau_start >= tau_end > 0")
        if min(self.beta, self.beta_final, self.beta_g, self.gamma) < 0:
            raise ConfigError("loss weights must be nonnegative")


def init_movae(data_dim, target_dims, hyper=None, seed=0):
    hyper = hyper or MoVaeHyper()
    act = {"kind": "leaky_relu", "slope": hyper.slope}
    experts = []
    for k, d in enumerate(target_dims):
        if not 1 <= d < data_dim:
            raise ConfigError(f"target dim {d} must lie in [1, {data_dim - 1}]")
        enc = mlp_init([data_dim, *hyper.hidden, 2 * hyper.latent_dim], act,
                       derive_seed(seed, "movae-enc", k))
        dec = mlp_init([hyper.latent_dim, *hyper.hidden, data_dim], act,
                       derive_seed(seed, "movae-dec", k))
        experts.append(Expert(enc, dec, int(d)))
    gate = mlp_init([data_dim, *hyper.gate_hidden, len(experts)], act, derive_seed(seed, "movae-gate"))
    return MoVaeModel(experts, gate, np.zeros(len(experts)), hyper.latent_dim)


def gate_posterior(model, x, tau=1.0, mode="soft", seed=None):
    """Routing probabilities: softmax of gate logits, or a Gumbel-softmax draw."""
    if tau <= 0:
        raise ConfigError("tau must be positive")
    logits = mlp_forward(model.gate, np.atleast_2d(x))[0]
    if mode == "soft":
        return softmax(logits, axis=1)
    if mode == "gumbel":
        g = np.random.default_rng(seed).gumbel(size=logits.shape)
        return softmax((logits + g) / tau, axis=1)
    raise ConfigError(f"unknown gate mode {mode!r}")


def projection_penalty(svals, d, D):
    """(1/d) sum_{i<=d} (s_i - 1)^2 + (1/(D-d)) sum_{i>d} s_i^2, zero-padded to D."""
    s = np.zeros(D)
    sv = np.asarray(svals, dtype=float)[:D]
    s[: sv.size] = sv
    return float(np.sum((s[:d] - 1.0) ** 2) / d + np.sum(s[d:] ** 2) / (D - d))


def _penalty_and_grad(jac, d):
    """Batched penalty for Jacobians ``(n, D, l)`` and its gradient dP/dJ."""
    n, D, l = jac.shape
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    r = s.shape[1]
    sp = np.zeros((n, D))
    sp[:, :r] = s
    pen = np.sum((sp[:, :d] - 1.0) ** 2, axis=1) / d + np.sum(sp[:, d:] ** 2, axis=1) / (D - d)
    ds = np.concatenate([2.0 * (sp[:, :d] - 1.0) / d, 2.0 * sp[:, d:] / (D - d)], axis=1)[:, :r]
    return pen, u @ (ds[:, :, None] * vt)


@dataclass
class LossTerms:
    recon: float = 0.0
    kl: float = 0.0
    gate_kl: float = 0.0
    penalty: float = 0.0
    mass: Optional[np.ndarray] = None  # mean routing weight per expert


def movae_loss(model, batch, hyper, tau=1.0, seed=0, beta=None, routing=None, gumbel=True):
    """Batch loss and gradients (ordered like ``model.arrays()``).

    ``routing`` (``(B, K)`` one-hot) freezes the assignment: the gate then
    receives zero gradient. Otherwise the routing weights are a
    Gumbel-softmax draw at temperature ``tau`` (or the plain softmax when
    ``gumbel`` is False). The penalty gradient treats activation masks as
    constants. Returns ``(loss, grads, terms)``.
    """
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    B, D = x.shape
    if B == 0:
        raise ConfigError("empty batch")
    beta = hyper.beta if beta is None else beta
    rec_c = 1.0 if hyper.recon_sigma is None else 0.5 / hyper.recon_sigma**2
    rng = np.random.default_rng(seed)
    l = model.latent_dim
    K = model.K
    logw = log_softmax(model.mixture_logits)

    trainable_gate = routing is None
    if trainable_gate:
        logits, gcache = mlp_forward(model.gate, x)
        t = tau if gumbel else 1.0
        y = (logits + rng.gumbel(size=logits.shape)) / t if gumbel else logits
        logh = log_softmax(y, axis=1)
        h = np.exp(logh)
    else:
        h = np.asarray(routing, dtype=float)
        logh = np.zeros_like(h)

    grads = []
    dl_dh = np.zeros((B, K))
    loss = 0.0
    terms = LossTerms(mass=h.mean(axis=0))
    for k, ex in enumerate(model.experts):
        xi_all = rng.standard_normal((B, l))
        idx = np.flatnonzero(h[:, k] > 0) if not trainable_gate else np.arange(B)
        g_enc = [np.zeros_like(a) for a in ex.encoder.arrays()]
        g_dec = [np.zeros_like(a) for a in ex.decoder.arrays()]
        if idx.size:
            xb, xi, hk = x[idx], xi_all[idx], h[idx, k]
            enc_out, ecache = mlp_forward(ex.encoder, xb)
            mu, lv = enc_out[:, :l], enc_out[:, l:]
            std = np.exp(0.5 * lv)
            z = mu + std * xi
            xhat, dcache = mlp_forward(ex.decoder, z)
            resid = xb - xhat
            rec = rec_c * np.sum(resid**2, axis=1)
            kl = 0.5 * np.sum(mu**2 + std**2 - lv - 1.0, axis=1)
            gate_term = -hyper.beta_g * (logw[k] - logh[idx, k])
            tangents = jacobian_tangents(ex.decoder, dcache)
            jac = np.swapaxes(tangents[-1], 1, 2)
            pen, dpen = _penalty_and_grad(jac, ex.target_dim)
            ell = rec + beta * kl + gate_term + hyper.gamma * pen
            if not np.all(np.isfinite(ell)):
                for name, v in (("reconstruction", rec), ("kl", kl), ("gate", gate_term), ("penalty", pen)):
                    if not np.all(np.isfinite(v)):
                        raise NumericError(f"non-finite {name} term for expert {k}")
            loss += float(np.sum(hk * ell)) / B
            terms.recon += float(np.sum(hk * rec)) / B
            terms.kl += float(np.sum(hk * kl)) / B
            terms.gate_kl += float(np.sum(hk * gate_term)) / B
            terms.penalty += float(np.sum(hk * pen)) / B
            dl_dh[idx, k] = ell + hyper.beta_g

            c = hk / B
            g_dec, dz = mlp_backward(ex.decoder, dcache, -2.0 * rec_c * resid * c[:, None])
            g_pen = jacobian_weight_grads(ex.decoder, dcache, tangents,
                                          (hyper.gamma * c)[:, None, None] * dpen)
            g_dec = [a + b for a, b in zip(g_dec, g_pen)]
            dmu = dz + beta * c[:, None] * mu
            dlv = 0.5 * dz * xi * std + 0.5 * beta * c[:, None] * (std**2 - 1.0)
            g_enc, _ = mlp_backward(ex.encoder, ecache, np.concatenate([dmu, dlv], axis=1))
        grads += g_enc + g_dec

    if trainable_gate:
        a = dl_dh / B
        dy = h * (a - np.sum(h * a, axis=1, keepdims=True))
        if gumbel:
            dy = dy / tau
        g_gate, _ = mlp_backward(model.gate, gcache, dy)
    else:
        g_gate = [np.zeros_like(a) for a in model.gate.arrays()]
    g_pi = -hyper.beta_g / B * (h.sum(axis=0) - np.exp(logw) * h.sum())
    grads += g_gate + [g_pi]
    return loss, grads, terms


@dataclass
class MoVaeResult:
    model: MoVaeModel
    labels: np.ndarray  # 1-based expert index per training point
    soft: np.ndarray  # (n, K) soft routing probabilities
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _batches(n, size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + size] for s in range(0, n, size)]


def train_movae(dataset, target_dims, hyper=None, seed=0, callback=None):
    """Two-phase training.

    Phase 1: Gumbel-softmax routing, temperature decayed geometrically per
    epoch from tau_start to tau_end, latent KL weight ``beta``. Phase 2:
    routing frozen at the argmax of the soft gate, gate and mixture logits
    untouched, latent KL weight ramped linearly to ``beta_final``.
    """
    hyper = hyper or MoVaeHyper()
    x = np.asarray(getattr(dataset, "points", dataset), dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("training data must be a nonempty 2-D array")
    n, D = x.shape
    model = init_movae(D, target_dims, hyper, seed)
    rng = derive_rng(seed, "movae-batches")
    history, warnings = [], []
    step = 0

    arrays = model.arrays()
    state = AdamState.for_arrays(arrays, lr=hyper.lr)
    e1 = hyper.epochs_phase1
    low_mass = np.zeros(model.K, dtype=int)
    for epoch in range(e1):
        tau = hyper.tau_start * (hyper.tau_end / hyper.tau_start) ** (epoch / max(e1 - 1, 1))
        tot, mass = 0.0, np.zeros(model.K)
        for idx in _batches(n, hyper.batch, rng):
            loss, grads, terms = movae_loss(model, x[idx], hyper, tau, derive_seed(seed, "movae-step", step))
            adam_step(arrays, grads, state)
            tot += loss * idx.size
            mass += terms.mass * idx.size
            step += 1
        mass /= n
        low_mass = np.where(mass < 0.01, low_mass + 1, 0)
        for k in np.flatnonzero(low_mass == 50):
            msg = f"expert {k + 1} collapsed: <1% routing mass for 50 epochs (epoch {epoch + 1})"
            log.warning(msg)
            warnings.append(msg)
        history.append({"phase": 1, "epoch": epoch + 1, "loss": tot / n, "tau": tau,
                        "mass": mass.tolist()})
        if callback:
            callback(history[-1])

    soft = gate_posterior(model, x)
    route = np.eye(model.K)[np.argmax(soft, axis=1)]
    arrays = model.expert_arrays()
    state = AdamState.for_arrays(arrays, lr=hyper.lr)
    e2 = hyper.epochs_phase2
    for epoch in range(e2):
        beta = hyper.beta + (hyper.beta_final - hyper.beta) * (epoch + 1) / e2
        tot = 0.0
        for idx in _batches(n, hyper.batch, rng):
            loss, grads, _ = movae_loss(model, x[idx], hyper, seed=derive_seed(seed, "movae-step", step),
                                        beta=beta, routing=route[idx])
            adam_step(arrays, grads[: len(arrays)], state)
            tot += loss * idx.size
            step += 1
        history.append({"phase": 2, "epoch": e1 + epoch + 1, "loss": tot / n, "beta": beta})
        if callback:
            callback(history[-1])

    soft = gate_posterior(model, x)
    return MoVaeResult(model, np.argmax(soft, axis=1) + 1, soft, history, warnings)


def reconstruct(model, x, labels=None):
    """Decode the encoder mean of each point through its routed expert."""
    x = np.atleast_2d(np.asarray(x, float))
    if labels is None:
        labels = np.argmax(gate_posterior(model, x), axis=1) + 1
    out = np.zeros_like(x)
    for k, ex in enumerate(model.experts):
        idx = np.flatnonzero(labels == k + 1)
        if idx.size:
            mu = mlp_forward(ex.encoder, x[idx])[0][:, : model.latent_dim]
            out[idx] = mlp_forward(ex.decoder, mu)[0]
    return out


def movae_generate(model, n, seed=0):
    """Sample expert ~ Cat(softmax(pi)), z ~ N(0, I), return decoded points and 1-based labels."""
    rng = np.random.default_rng(seed)
    labels = rng.choice(model.K, size=n, p=model.mixture_weights()) + 1
    z = rng.standard_normal((n, model.latent_dim))
    out = np.zeros((n, model.data_dim))
    for k, ex in enumerate(model.experts):
        idx = np.flatnonzero(labels == k + 1)
        if idx.size:
            out[idx] = mlp_forward(ex.decoder, z[idx])[0]
    return out, labels


def save_movae(model, path, hyper=None):
    d = model.to_dict()
    if hyper is not None:
        d["hyper"] = asdict(hyper)
        d["hyper"]["hidden"] = list(hyper.hidden)
        d["hyper"]["gate_hidden"] = list(hyper.gate_hidden)
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_movae(path):
    with open(path) as fh:
        return MoVaeModel.from_dict(json.load(fh))
