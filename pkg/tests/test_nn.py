import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stratlearn.errors import ConfigError, NumericError, ShapeError
from stratlearn.nn import (Activation, AdamState, MlpParams, adam_step, decoder_jacobian,
                           load_mlp, mlp_backward, mlp_forward, mlp_init, save_mlp)


def straight_line_forward(params, x):
    """Independent re-evaluation, one sample and one neuron at a time."""
    act = params.activation
    out = []
    for row in x:
        h = list(row)
        for li, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = [sum(w[o, i] * h[i] for i in range(len(h))) + b[o] for o in range(w.shape[0])]
            if li < params.n_layers - 1:
                if act.kind == "relu":
                    z = [max(v, 0.0) for v in z]
                elif act.kind == "leaky_relu":
                    z = [v if v >= 0 else act.slope * v for v in z]
            h = z
        out.append(h)
    return np.array(out)


def fd_param_grads(params, x, loss_w, h=1e-6):
    grads = []
    for a in params.arrays():
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = np.sum(loss_w * mlp_forward(params, x)[0])
            flat[i] = old - h
            lm = np.sum(loss_w * mlp_forward(params, x)[0])
            flat[i] = old
            gf[i] = (lp - lm) / (2 * h)
        grads.append(g)
    return grads


def test_zero_bias_init_and_determinism():
    p = mlp_init([2, 2], seed=4)
    assert np.array_equal(p.biases[0], [0.0, 0.0])
    q = mlp_init([2, 2], seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_full_scale_architecture_shapes():
    p = mlp_init([114, 512, 512, 512, 50], seed=0)
    assert [w.shape for w in p.weights] == [(512, 114), (512, 512), (512, 512), (50, 512)]


def test_he_uniform_bounds():
    p = mlp_init([100, 50], "relu", seed=1)
    assert np.max(np.abs(p.weights[0])) <= np.sqrt(6 / 100)


@pytest.mark.parametrize("sizes", [[], [3], [3, 0, 2]])
def test_invalid_layer_sizes(sizes):
    with pytest.raises(ConfigError):
        mlp_init(sizes)


def test_zero_weights_give_bias():
    p = mlp_init([3, 4, 2], seed=0)
    for w in p.weights:
        w[:] = 0
    p.biases[-1][:] = [1.5, -2.0]
    out, _ = mlp_forward(p, np.random.default_rng(0).standard_normal((5, 3)))
    assert np.array_equal(out, np.tile([1.5, -2.0], (5, 1)))


def test_identity_layer():
    p = MlpParams([3, 3], [np.eye(3)], [np.zeros(3)], Activation("identity"))
    x = np.random.default_rng(1).standard_normal((4, 3))
    assert np.array_equal(mlp_forward(p, x)[0], x)


@pytest.mark.parametrize("act", ["relu", "leaky_relu", "identity"])
def test_forward_matches_straight_line(act):
    p = mlp_init([3, 5, 4, 2], act, seed=2)
    for b in p.biases:
        b[:] = np.random.default_rng(3).standard_normal(b.shape)
    x = np.random.default_rng(4).standard_normal((6, 3))
    np.testing.assert_allclose(mlp_forward(p, x)[0], straight_line_forward(p, x), atol=1e-12, rtol=0)


def test_forward_shape_error():
    p = mlp_init([3, 2], seed=0)
    with pytest.raises(ShapeError):
        mlp_forward(p, np.zeros((2, 4)))


def test_zero_output_grads():
    p = mlp_init([3, 4, 2], seed=0)
    _, cache = mlp_forward(p, np.ones((2, 3)))
    grads, _ = mlp_backward(p, cache, np.zeros((2, 2)))
    assert all(not np.any(g) for g in grads)


def test_linear_scalar_gradient():
    p = MlpParams([1, 1], [np.array([[2.0]])], [np.zeros(1)], Activation("identity"))
    _, cache = mlp_forward(p, np.array([[3.0]]))
    grads, gin = mlp_backward(p, cache, np.array([[1.0]]))
    assert grads[0][0, 0] == 3.0
    assert gin[0, 0] == 2.0


def test_backward_cache_mismatch():
    p = mlp_init([3, 4, 2], seed=0)
    q = mlp_init([3, 2], seed=0)
    _, cache = mlp_forward(q, np.ones((1, 3)))
    with pytest.raises(ShapeError):
        mlp_backward(p, cache, np.ones((1, 2)))


@settings(max_examples=15, deadline=None)
@given(depth=st.integers(0, 3), width=st.integers(1, 64), seed=st.integers(0, 10_000),
       act=st.sampled_from(["relu", "leaky_relu", "identity"]))
def test_backward_matches_finite_differences(depth, width, seed, act):
    rng = np.random.default_rng(seed)
    sizes = [3] + [width] * depth + [2]
    p = mlp_init(sizes, act, seed=seed)
    for b in p.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((2, 3))
    loss_w = rng.standard_normal((2, 2))
    _, cache = mlp_forward(p, x)
    grads, _ = mlp_backward(p, cache, loss_w)
    fd = fd_param_grads(p, x, loss_w)
    for g, f in zip(grads, fd):
        err = np.abs(g - f) / np.maximum(np.maximum(np.abs(g), np.abs(f)), 1e-4)
        assert np.max(err) < 1e-4


def test_adam_first_step_is_signed_lr():
    p = [np.zeros(4)]
    g = [np.array([0.5, -2.0, 3.0, -1e-3])]
    state = AdamState.for_arrays(p, lr=0.01)
    adam_step(p, g, state)
    np.testing.assert_allclose(p[0], -0.01 * np.sign(g[0]), rtol=1e-4)
    assert state.step_count == 1


def test_adam_zero_gradient():
    p = [np.arange(3.0)]
    state = AdamState.for_arrays(p)
    adam_step(p, [np.zeros(3)], state)
    assert np.array_equal(p[0], np.arange(3.0))
    assert state.step_count == 1


def test_adam_matches_scalar_recurrence():
    p = [np.array([0.3])]
    gs = [0.7, -0.2]
    state = AdamState.for_arrays(p, lr=0.05)
    for g in gs:
        adam_step(p, [np.array([g])], state)
    theta, m, v = 0.3, 0.0, 0.0
    for t, g in enumerate(gs, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.05 * (m / (1 - 0.9**t)) / ((v / (1 - 0.999**t)) ** 0.5 + 1e-8)
    assert abs(p[0][0] - theta) < 1e-12


def test_adam_rejects_nonfinite():
    p = mlp_init([2, 3, 1], seed=0)
    arrays = p.arrays()
    grads = [np.zeros_like(a) for a in arrays]
    grads[2][0, 0] = np.nan
    with pytest.raises(NumericError, match="layer 1"):
        adam_step(arrays, grads, AdamState.for_arrays(arrays))


def test_jacobian_linear_network():
    rng = np.random.default_rng(0)
    w1, w2 = rng.standard_normal((5, 3)), rng.standard_normal((4, 5))
    p = MlpParams([3, 5, 4], [w1, w2], [np.zeros(5), np.zeros(4)], Activation("identity"))
    np.testing.assert_allclose(decoder_jacobian(p, rng.standard_normal(3)), w2 @ w1, atol=1e-14)


def test_jacobian_relu_all_active():
    rng = np.random.default_rng(1)
    w1, w2 = np.abs(rng.standard_normal((5, 3))), rng.standard_normal((4, 5))
    p = MlpParams([3, 5, 4], [w1, w2], [np.ones(5), np.zeros(4)], Activation("relu"))
    np.testing.assert_allclose(decoder_jacobian(p, np.abs(rng.standard_normal(3))), w2 @ w1, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(seed):
    p = mlp_init([4, 16, 16, 3], "leaky_relu", seed=seed)
    z = np.random.default_rng(seed).standard_normal(4)
    jac = decoder_jacobian(p, z)
    h = 1e-6
    fd = np.stack([(p(z + h * e) - p(z - h * e)) / (2 * h) for e in np.eye(4)], axis=1)
    np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-8)


def test_jacobian_first_order():
    p = mlp_init([4, 16, 3], "leaky_relu", seed=9)
    z = np.random.default_rng(9).standard_normal(4)
    delta = 1e-6 * np.random.default_rng(10).standard_normal(4)
    np.testing.assert_allclose(p(z + delta) - p(z), decoder_jacobian(p, z) @ delta, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    p = mlp_init([3, 7, 2], "leaky_relu", seed=5)
    path = tmp_path / "m.json"
    save_mlp(p, path)
    q = load_mlp(path)
    assert q.layer_sizes == [3, 7, 2] and q.activation == p.activation
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
