"""Small dense MLP engine in numpy.

Weights are stored ``(out, in)`` so a layer computes ``h @ W.T + b``. All
arithmetic is float64. Activation is applied after every layer except the
last one.
"""

import json
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"  # "relu" | "leaky_relu" | "identity"
    slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "identity"):
            raise ConfigError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 < self.slope < 1.0:
            raise ConfigError("leaky_relu slope must lie in (0, 1)")

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z >= 0.0, z, self.slope * z)
        return z

    def derivative(self, z):
        # At exactly 0 the positive branch is used (slope 1).
        if self.kind == "relu":
            return (z >= 0.0).astype(z.dtype)
        if self.kind == "leaky_relu":
            return np.where(z >= 0.0, 1.0, self.slope)
        return np.ones_like(z)

    def gain(self):
        if self.kind == "relu":
            return np.sqrt(2.0)
        if self.kind == "leaky_relu":
            return np.sqrt(2.0 / (1.0 + self.slope**2))
        return 1.0

    def to_dict(self):
        return {"kind": self.kind, "slope": self.slope}


def as_activation(act):
    if isinstance(act, Activation):
        return act
    if isinstance(act, dict):
        return Activation(**act)
    return Activation(act)


@dataclass
class MlpParams:
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("number of weight/bias arrays does not match layer_sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i + 1], self.layer_sizes[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}, expected {expect}")

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def arrays(self):
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def __call__(self, x):
        return mlp_forward(self, x)[0]

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format_version {d.get('format_version')!r}")
        return cls(
            [int(s) for s in d["layer_sizes"]],
            [np.asarray(w, dtype=np.float64).reshape(o, i)
             for w, o, i in zip(d["weights"], d["layer_sizes"][1:], d["layer_sizes"][:-1])],
            [np.asarray(b, dtype=np.float64) for b in d["biases"]],
            as_activation(d["activation"]),
        )


def save_mlp(params, path):
    with open(path, "w") as fh:
        json.dump(params.to_dict(), fh)


def load_mlp(path):
    with open(path) as fh:
        return MlpParams.from_dict(json.load(fh))


def mlp_init(layer_sizes, activation="relu", seed=0):
    """He-style uniform initialization, zero biases.

    Layer ``i`` draws from ``U(-a, a)`` with ``a = gain * sqrt(3 / fan_in)``,
    where gain is sqrt(2) for ReLU, sqrt(2 / (1 + slope^2)) for LeakyReLU and
    1 for the identity.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigError(f"invalid layer_sizes {layer_sizes!r}")
    act = as_activation(activation)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = act.gain() * np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases, act)


class Cache(NamedTuple):
    inputs: list  # input to each layer
    preacts: list  # pre-activation of each layer
    masks: list  # activation derivative at each hidden pre-activation


def mlp_forward(params, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {np.shape(inputs)} does not match input size {params.in_dim}")
    act = params.activation
    ins, pres, masks = [], [], []
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        ins.append(h)
        z = h @ w.T + b
        pres.append(z)
        if i == last:
            h = z
        else:
            masks.append(act.derivative(z))
            h = act(z)
    if squeeze:
        return h[0], Cache(ins, pres, masks)
    return h, Cache(ins, pres, masks)


def mlp_backward(params, cache, output_grads):
    """Reverse pass.

    Returns ``(param_grads, input_grads)``; ``param_grads`` follows the
    ``params.arrays()`` order.
    """
    if len(cache.inputs) != params.n_layers:
        raise ShapeError("cache does not belong to these parameters")
    g = np.asarray(output_grads, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ShapeError(f"output_grads shape {g.shape} != output shape {cache.preacts[-1].shape}")
    grads = [None] * (2 * params.n_layers)
    for i in range(params.n_layers - 1, -1, -1):
        if i != params.n_layers - 1:
            g = g * cache.masks[i]
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i]
    return grads, g


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays, **hyper):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], **hyper)


def adam_step(arrays, grads, state, lr=None):
    """One bias-corrected Adam update, applied in place to ``arrays``.

    ``arrays`` is a list of parameter arrays (e.g. ``MlpParams.arrays()``).
    Returns ``(arrays, state)``.
    """
    if not (len(arrays) == len(grads) == len(state.first_moment)):
        raise ShapeError("parameter, gradient and moment lists differ in length")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in layer {i // 2} (array {i})")
    lr = state.lr if lr is None else lr
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        if m.shape != p.shape or g.shape != p.shape:
            raise ShapeError(f"adam buffer shape {m.shape} vs parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return arrays, state


def jacobian_tangents(params, cache):
    """Forward-mode tangents of a batch through the network.

    Returns a list ``T`` with ``T[0]`` the identity seeds, shape
    ``(B, in, in)``, and ``T[i]`` of shape ``(B, in, width_i)``: row ``j`` is
    the derivative of layer ``i``'s output with respect to input coordinate
    ``j``. ``T[-1]`` is the transposed Jacobian ``(B, in, out)``.
    """
    batch = cache.inputs[0].shape[0]
    d_in = params.in_dim
    t = np.broadcast_to(np.eye(d_in), (batch, d_in, d_in))
    tangents = [t]
    last = params.n_layers - 1
    for i, w in enumerate(params.weights):
        if i == 0:
            # identity seeds: the first product is W^T itself
            u = np.broadcast_to(w.T, (batch, d_in, w.shape[0]))
        else:
            u = (t.reshape(-1, t.shape[-1]) @ w.T).reshape(batch, d_in, w.shape[0])
        if i != last:
            u = u * cache.masks[i][:, None, :]
        tangents.append(u)
        t = u
    return tangents


def batch_jacobian(params, latents):
    """Jacobians ``(B, out, in)`` of the network at each row of ``latents``."""
    _, cache = mlp_forward(params, np.atleast_2d(latents))
    return np.swapaxes(jacobian_tangents(params, cache)[-1], 1, 2), cache


def decoder_jacobian(params, latent):
    """Exact Jacobian (out x in) of the network at a single input vector."""
    z = np.asarray(latent, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != params.in_dim:
        raise ShapeError(f"latent shape {z.shape} does not match input size {params.in_dim}")
    jac, _ = batch_jacobian(params, z[None, :])
    return jac[0]


def jacobian_weight_grads(params, cache, tangents, jac_grads):
    """Pull a gradient on the Jacobians back to the weights.

    ``jac_grads`` has shape ``(B, out, in)`` and holds dL/dJ for each sample.
    Activation masks are held fixed at their values in ``cache``, so biases get
    zero gradient and nothing flows to the inputs. Away from activation kinks
    this is the exact derivative, since the masks are locally constant.
    """
    batch, d_in = tangents[0].shape[:2]
    grads = [np.zeros_like(a) for a in params.arrays()]
    u_bar = np.swapaxes(jac_grads, 1, 2)  # (B, in, out)
    for i in range(params.n_layers - 1, -1, -1):
        w = params.weights[i]
        if i == 0:
            # identity seeds again: sum over the batch
            grads[0] = u_bar.sum(axis=0).T
            break
        prev = tangents[i].reshape(-1, tangents[i].shape[-1])
        flat = u_bar.reshape(-1, w.shape[0])
        grads[2 * i] = flat.T @ prev
        t_bar = (flat @ w).reshape(batch, d_in, w.shape[1])
        u_bar = t_bar * cache.masks[i - 1][:, None, :]
    return grads
