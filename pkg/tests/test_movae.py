import numpy as np
import pytest

from stratlearn import strata
from stratlearn.errors import ConfigError
from stratlearn.movae import (Expert, MoVaeHyper, MoVaeModel, _penalty_and_grad, gate_posterior,
                              init_movae, load_movae, movae_generate, movae_loss, projection_penalty,
                              reconstruct, save_movae, train_movae)
from stratlearn.nn import Activation, MlpParams

TINY = MoVaeHyper(latent_dim=2, hidden=(8,), gate_hidden=(8,), beta=0.3, beta_g=0.2, gamma=0.7,
                  epochs_phase1=2, epochs_phase2=2, batch=32)


def linear(w, b):
    w = np.asarray(w, float)
    return MlpParams([w.shape[1], w.shape[0]], [w], [np.asarray(b, float)], Activation("identity"))


def gate_with_logits(logits, D):
    return linear(np.zeros((len(logits), D)), logits)


def test_gate_soft_examples():
    m = init_movae(3, [1, 2], TINY, seed=0)
    m.gate = gate_with_logits([0.0, 0.0], 3)
    np.testing.assert_allclose(gate_posterior(m, np.ones(3)), [[0.5, 0.5]], atol=1e-15)
    m.gate = gate_with_logits([np.log(2.0), 0.0], 3)
    np.testing.assert_allclose(gate_posterior(m, np.ones(3)), [[2 / 3, 1 / 3]], atol=1e-15)


def test_gate_low_temperature_is_one_hot():
    m = init_movae(3, [1, 2, 1], TINY, seed=1)
    x = np.random.default_rng(0).standard_normal((50, 3))
    h = gate_posterior(m, x, tau=0.01, mode="gumbel", seed=3)
    logits = m.gate(x) + np.random.default_rng(3).gumbel(size=(50, 3))
    top2 = np.sort(logits, axis=1)[:, -2:]
    # generic rows: perturbed top-two margin well above tau
    generic = top2[:, 1] - top2[:, 0] > 0.2
    assert np.mean(generic) >= 0.8
    err = np.max(np.abs(h - np.eye(3)[np.argmax(h, axis=1)]), axis=1)
    assert np.all(err[generic] < 1e-6)


@pytest.mark.parametrize("mode", ["soft", "gumbel"])
def test_gate_is_distribution(mode):
    m = init_movae(4, [1, 2, 3], TINY, seed=2)
    h = gate_posterior(m, np.random.default_rng(1).standard_normal((100, 4)), tau=0.5, mode=mode, seed=0)
    assert np.all(h > 0) and np.max(np.abs(h.sum(axis=1) - 1)) < 1e-12


def test_gate_validation():
    m = init_movae(3, [1, 2], TINY, seed=0)
    with pytest.raises(ConfigError):
        gate_posterior(m, np.ones(3), tau=0.0)
    with pytest.raises(ConfigError):
        gate_posterior(m, np.ones(3), mode="hard")


def test_penalty_examples():
    assert projection_penalty([1, 1, 0, 0, 0], 2, 5) == 0
    assert projection_penalty([0, 0, 0, 0, 0], 2, 5) == 1
    assert projection_penalty([1, 1, 1, 0, 0], 2, 5) == pytest.approx(1 / 3)
    # zero padding when the latent is narrower than D
    assert projection_penalty([1, 1], 2, 5) == 0


def test_penalty_zero_iff_exact_spectrum():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((5, 3)))
    exact = q[:, :2] @ np.eye(2, 3)  # singular values (1, 1, 0)
    pen, _ = _penalty_and_grad(exact[None], 2)
    assert pen[0] < 1e-24
    for scale in (0.9, 1.1):
        assert _penalty_and_grad(scale * exact[None], 2)[0][0] > 0
    bent = exact + 1e-3 * q[:, 2:3] @ np.array([[0.0, 0.0, 1.0]])
    assert _penalty_and_grad(bent[None], 2)[0][0] > 0


def test_penalty_grad_fd():
    jac = np.random.default_rng(1).standard_normal((1, 4, 3))
    _, g = _penalty_and_grad(jac, 2)
    h = 1e-6
    fd = np.zeros_like(jac)
    for idx in np.ndindex(jac.shape):
        e = np.zeros_like(jac)
        e[idx] = h
        fd[idx] = (_penalty_and_grad(jac + e, 2)[0][0] - _penalty_and_grad(jac - e, 2)[0][0]) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def exact_autoencoder(D=3):
    enc = linear(np.concatenate([np.eye(D), np.zeros((D, D))]), np.r_[np.zeros(D), -80.0 * np.ones(D)])
    dec = linear(np.eye(D), np.zeros(D))
    return MoVaeModel([Expert(enc, dec, 1)], linear(np.zeros((1, D)), [0.0]), np.zeros(1), D)


def test_exact_reconstruction_zero_loss():
    hyper = MoVaeHyper(beta=0.0, beta_g=0.0, gamma=0.0)
    loss, _, terms = movae_loss(exact_autoencoder(), np.random.default_rng(0).standard_normal((10, 3)),
                                hyper, seed=1)
    assert loss < 1e-20 and terms.recon < 1e-20


def test_kl_closed_form():
    m = exact_autoencoder(D=4)
    m.experts[0].encoder.biases[0][4:] = 0.0  # logvar = 0
    hyper = MoVaeHyper(beta=1.0, beta_g=0.0, gamma=0.0)
    _, _, terms = movae_loss(m, np.zeros((1, 4)), hyper, seed=0)
    assert terms.kl == 0
    _, _, terms = movae_loss(m, np.array([[1.0, 0, 0, 0]]), hyper, seed=0)
    assert terms.kl == pytest.approx(0.5, abs=1e-15)


def test_gate_term_is_weighted_kl():
    m = init_movae(3, [1, 2], TINY, seed=4)
    x = np.random.default_rng(2).standard_normal((40, 3))
    _, _, terms = movae_loss(m, x, TINY, gumbel=False)
    h = gate_posterior(m, x)
    w = m.mixture_weights()
    kl = np.mean(np.sum(h * (np.log(h) - np.log(w)), axis=1))
    assert terms.gate_kl == pytest.approx(TINY.beta_g * kl, rel=1e-12)
    assert kl >= 0
    # gate reproducing w exactly gives zero
    m.mixture_logits = np.array([0.3, -0.4])
    m.gate = gate_with_logits(m.mixture_logits, 3)
    _, _, terms = movae_loss(m, x, TINY, gumbel=False)
    assert abs(terms.gate_kl) < 1e-15


def fd_check(model, x, **kw):
    loss, grads, _ = movae_loss(model, x, TINY, **kw)
    h = 1e-6
    for a, g in zip(model.arrays(), grads):
        flat = a.reshape(-1)
        fd = np.zeros(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = movae_loss(model, x, TINY, **kw)[0]
            flat[i] = old - h
            lm = movae_loss(model, x, TINY, **kw)[0]
            flat[i] = old
            fd[i] = (lp - lm) / (2 * h)
        g = g.reshape(-1)
        err = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8)
        assert err < 1e-3 or np.linalg.norm(g - fd) < 1e-9


@pytest.mark.parametrize("kw", [dict(tau=0.7, seed=3), dict(gumbel=False, seed=4),
                                dict(seed=5, routing=np.eye(2)[[0, 1, 1, 0, 1, 0]])])
def test_loss_gradient_fd(kw):
    m = init_movae(3, [1, 2], TINY, seed=6)
    m.mixture_logits = np.array([0.2, -0.1])
    fd_check(m, np.random.default_rng(7).standard_normal((6, 3)), **kw)


def test_routing_zeroes_gate_gradient():
    m = init_movae(3, [1, 2], TINY, seed=0)
    _, grads, _ = movae_loss(m, np.ones((2, 3)), TINY, routing=np.eye(2))
    n_exp = len(m.expert_arrays())
    assert all(not np.any(g) for g in grads[n_exp:n_exp + len(m.gate.arrays())])


def test_single_expert_is_plain_vae():
    hyper = MoVaeHyper(latent_dim=2, hidden=(8,), gate_hidden=(4,), beta_g=5.0)
    m = init_movae(3, [2], hyper, seed=1)
    x = np.random.default_rng(0).standard_normal((20, 3))
    loss, _, t = movae_loss(m, x, hyper, seed=2)
    assert t.gate_kl == 0
    assert loss == pytest.approx(t.recon + hyper.beta * t.kl + hyper.gamma * t.penalty, rel=1e-12)
    res = train_movae(x, [2], MoVaeHyper(latent_dim=2, hidden=(8,), gate_hidden=(4,), epochs_phase1=2,
                                         epochs_phase2=1, batch=8), seed=0)
    assert np.all(res.labels == 1)


def small_data():
    return strata.sample_stratified(strata.circle_plane(), 200, 0)


def test_phase2_freezes_gate_and_pi():
    ds = small_data()
    a = train_movae(ds, [1, 2], TINY.__class__(**{**TINY.__dict__, "epochs_phase2": 0}), seed=3)
    b = train_movae(ds, [1, 2], TINY, seed=3)
    assert all(np.array_equal(p, q) for p, q in zip(a.model.gate.arrays(), b.model.gate.arrays()))
    assert np.array_equal(a.model.mixture_logits, b.model.mixture_logits)
    assert not all(np.array_equal(p, q) for p, q in zip(a.model.expert_arrays(), b.model.expert_arrays()))


def test_training_deterministic_and_schedule():
    ds = small_data()
    a = train_movae(ds, [1, 2], TINY, seed=1)
    b = train_movae(ds, [1, 2], TINY, seed=1)
    assert all(np.array_equal(p, q) for p, q in zip(a.model.arrays(), b.model.arrays()))
    taus = [h["tau"] for h in a.history if h["phase"] == 1]
    assert taus[0] == TINY.tau_start and taus[-1] == pytest.approx(TINY.tau_end)
    betas = [h["beta"] for h in a.history if h["phase"] == 2]
    assert betas[-1] == pytest.approx(TINY.beta_final)
    assert set(np.unique(a.labels)) <= {1, 2} and a.soft.shape == (200, 2)


def test_generate():
    m = init_movae(3, [1, 2], TINY, seed=0)
    out, labels = movae_generate(m, 0)
    assert out.shape == (0, 3) and labels.size == 0
    m.mixture_logits = np.array([50.0, -50.0])
    assert np.all(movae_generate(m, 100, seed=1)[1] == 1)
    m.mixture_logits = np.array([0.5, -0.3])
    n = 50_000
    _, labels = movae_generate(m, n, seed=2)
    p = m.mixture_weights()[0]
    assert abs(np.mean(labels == 1) - p) < 6 * np.sqrt(p * (1 - p) / n)


def test_reconstruct_and_checkpoint(tmp_path):
    m = init_movae(3, [1, 2], TINY, seed=5)
    x = np.random.default_rng(0).standard_normal((7, 3))
    save_movae(m, tmp_path / "m.json", TINY)
    back = load_movae(tmp_path / "m.json")
    assert np.array_equal(reconstruct(back, x), reconstruct(m, x))
    assert [e.target_dim for e in back.experts] == [1, 2]


def test_init_validation():
    with pytest.raises(ConfigError):
        init_movae(3, [3], TINY)
    with pytest.raises(ConfigError):
        MoVaeHyper(tau_start=0.1, tau_end=1.0)
