import numpy as np
import pytest

from helpers import central_diff, rel_err
from pcgen import distances as D
from pcgen import tensor as T
from pcgen.networks import (ConfigError, Discriminator, DiscriminatorConfig, Encoder, EncoderConfig,
                            Generator, GeneratorConfig, LatentCode, decode, discriminate, encode,
                            reparametrize)
from pcgen.rng import make_rng
from pcgen.tensor import Tape, Tensor

SMALL_ENC = dict(conv_widths=(4, 5, 5, 6, 7), feature_dim=6, latent_dim=3)


def _param_fd_check(net, loss_fn, tol, names=None, rng=None):
    # zero biases put dead units exactly on the ReLU kink; jitter them off it
    jitter = np.random.default_rng(99)
    for name, p in net.params.items():
        if name.endswith(".b"):
            p.data[...] = jitter.normal(scale=0.1, size=p.shape)
    with Tape():
        loss = loss_fn()
    net.zero_grad()
    T.backward(loss)
    r = rng or np.random.default_rng(0)
    for name in names or net.params:
        p = net.params[name]
        # spot-check a handful of coordinates of large blocks
        flat = p.data.reshape(-1)
        picks = r.choice(flat.size, size=min(flat.size, 6), replace=False)
        num = []
        for k in picks:
            old = flat[k]
            flat[k] = old + 1e-5
            with T.no_record():
                fp = loss_fn().item()
            flat[k] = old - 1e-5
            with T.no_record():
                fm = loss_fn().item()
            flat[k] = old
            num.append((fp - fm) / 2e-5)
        assert rel_err(p.grad.reshape(-1)[picks], num) < tol, name


def test_encoder_permutation_invariant_exact():
    enc = Encoder(EncoderConfig(latent_dim=16, categorical_k=4), make_rng(0))
    x = np.random.default_rng(1).normal(size=(256, 3))
    perm = np.random.default_rng(2).permutation(256)
    a, b = encode(x, enc), encode(x[perm], enc)
    assert np.array_equal(a.mu.data, b.mu.data)
    assert np.array_equal(a.logvar.data, b.logvar.data)
    assert np.array_equal(a.y.data, b.y.data)


def test_encoder_shapes_and_defaults():
    enc = Encoder(EncoderConfig(), make_rng(0))
    code = encode(np.random.default_rng(0).normal(size=(256, 3)), enc)
    assert code.mu.shape == (128,) and code.logvar.shape == (128,) and code.y is None
    assert np.all(code.logvar.data >= -10) and np.all(code.logvar.data <= 10)
    batch = enc(np.zeros((2, 10, 3)) + np.arange(3))
    assert batch.mu.shape == (2, 128)


def test_encoder_rejects_bad_input():
    enc = Encoder(EncoderConfig(**SMALL_ENC), make_rng(0))
    with pytest.raises(ConfigError):
        enc(np.zeros((5, 2)))
    with pytest.raises(ConfigError):
        EncoderConfig(conv_widths=(1, 2, 3))


def test_encoder_gradient_of_mu_norm():
    enc = Encoder(EncoderConfig(**SMALL_ENC, categorical_k=3), make_rng(3))
    x = np.random.default_rng(4).normal(size=(2, 9, 3))
    c = np.random.default_rng(5).normal(size=(2, 3))

    def loss():
        code = enc(x)
        return T.sum(T.square(code.mu)) + T.sum(T.mul(code.y, Tensor(c))) + T.sum(T.exp(code.logvar))

    _param_fd_check(enc, loss, 1e-4)


def test_encoder_sigmoid_output_range():
    enc = Encoder(EncoderConfig(**SMALL_ENC, variational=False, sigmoid_output=True), make_rng(0))
    z = enc(np.random.default_rng(0).normal(size=(4, 12, 3)) * 10).mu.data
    assert np.all((z > 0) & (z < 1))


def test_all_parameters_receive_gradient():
    rng = make_rng(0)
    enc = Encoder(EncoderConfig(latent_dim=8, categorical_k=4), rng)
    gen = Generator(GeneratorConfig(latent_dim=8, n_points=32), rng)
    disc = Discriminator(DiscriminatorConfig(in_dim=8), rng)
    x = np.random.default_rng(1).normal(size=(4, 32, 3))
    with Tape():
        code = enc(x)
        z = reparametrize(code, np.random.default_rng(2).normal(size=code.mu.shape))
        loss = D.emd_loss(gen(z), x) + T.mean(disc(z)) + T.sum(T.square(code.y))
    T.backward(loss)
    for net in (enc, gen, disc):
        for name, p in net.params.items():
            assert p.grad is not None and np.any(p.grad != 0), name


def test_reparametrize_contract():
    mu = Tensor(np.array([0.5, -1.0]))
    code = LatentCode(mu, Tensor(np.zeros(2)))
    assert np.array_equal(reparametrize(code, np.zeros(2)).data, mu.data)
    n = np.array([0.3, 0.7])
    assert np.allclose(reparametrize(code, n).data, mu.data + n, atol=0)
    with pytest.raises(ConfigError):
        reparametrize(LatentCode(mu), n)


def test_reparametrize_monte_carlo():
    r = np.random.default_rng(9)
    mu, logvar = np.array([0.3, -2.0, 1.5]), np.array([0.4, -1.2, 1.0])
    noise = r.standard_normal((100_000, 3))
    code = LatentCode(Tensor(np.tile(mu, (100_000, 1))), Tensor(np.tile(logvar, (100_000, 1))))
    z = reparametrize(code, noise).data
    std = np.exp(0.5 * logvar)
    assert np.all(np.abs(z.mean(0) - mu) <= 0.02 * np.maximum(np.abs(mu), std))
    assert np.all(np.abs(z.std(0) / std - 1) < 0.02)


def test_decode_shape_determinism_and_gradient():
    gen = Generator(GeneratorConfig(latent_dim=3, hidden=(5, 6, 6, 7), n_points=8), make_rng(1))
    z = np.random.default_rng(3).normal(size=3)
    out = decode(z, gen)
    assert out.shape == (8, 3)
    assert np.array_equal(out.data, decode(z, gen).data)
    target = np.random.default_rng(4).normal(size=(1, 8, 3))
    _param_fd_check(gen, lambda: D.chamfer_loss(gen(z[None]), target), 1e-4)
    with pytest.raises(FloatingPointError):
        decode(np.array([np.nan, 0, 0]), gen)


def test_discriminate_scalar_and_gradient():
    disc = Discriminator(DiscriminatorConfig(in_dim=4, hidden=(6, 5, 4, 3)), make_rng(2))
    z = np.random.default_rng(5).normal(size=4)
    s = discriminate(z, disc)
    assert s.shape == () and s.item() == discriminate(z, disc).item()
    zb = np.random.default_rng(6).normal(size=(5, 4))
    _param_fd_check(disc, lambda: T.sum(T.square(disc(zb))), 1e-4)
    with pytest.raises(ConfigError):
        disc(np.zeros(3))


def test_glorot_bounds():
    enc = Encoder(EncoderConfig(**SMALL_ENC), make_rng(0))
    w = enc.params["conv0.w"].data
    assert np.all(np.abs(w) <= np.sqrt(6 / (3 + 4)))
    assert np.all(enc.params["conv0.b"].data == 0)
