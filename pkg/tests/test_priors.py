import numpy as np
import pytest

from pcgen import priors as P
from pcgen import tensor as T
from pcgen.rng import make_rng


def mc_kl(mu, logvar, n, rng):
    """Monte Carlo E_q[log q - log p] for diagonal Gaussians."""
    std = np.exp(0.5 * logvar)
    eps = rng.standard_normal((n, len(mu)))
    z = mu + std * eps
    log_q = (-0.5 * eps ** 2 - 0.5 * logvar).sum(1)
    log_p = (-0.5 * z ** 2).sum(1)
    return float(np.mean(log_q - log_p))


def test_gaussian_moments():
    z = P.sample(P.gaussian(2), 100_000, make_rng(0))
    assert np.all(np.abs(z.mean(0)) < 0.02) and np.all(np.abs(z.std(0) - 1) < 0.02)


def test_categorical_one_hot():
    y = P.sample(P.categorical(4), 1000, make_rng(0))
    assert np.all(y.sum(1) == 1) and set(np.unique(y)) == {0.0, 1.0}


def test_beta_mass_at_endpoints():
    z = P.sample(P.beta(8), 20_000, make_rng(0))
    assert np.mean(np.minimum(z, 1 - z) < 0.05) > 0.95
    assert z.min() >= 1e-12 and z.max() <= 1 - 1e-12
    assert abs(z.mean() - 0.5) < 0.02


def test_beta_sampler_matches_moderate_shapes():
    # for well-behaved shapes the log-gamma route must reproduce Beta moments
    z = P.sample_beta(2.0, 5.0, 200_000, make_rng(1))
    assert abs(z.mean() - 2 / 7) < 3e-3
    assert abs(z.var() - (2 * 5) / (49 * 8)) < 1e-3


def test_sample_deterministic_per_seed():
    for spec in (P.gaussian(3), P.beta(3), P.categorical(5), P.make_gmm_prior(4, 3, seed=1)):
        assert np.array_equal(P.sample(spec, 10, make_rng(7)), P.sample(spec, 10, make_rng(7)))


def test_invalid_specs():
    with pytest.raises(P.PriorError):
        P.PriorSpec("laplace", 2)
    with pytest.raises(P.PriorError):
        P.PriorSpec("beta", 2, alpha=0.0)
    with pytest.raises(P.PriorError):
        P.sample(P.gaussian(2), 0, make_rng(0))
    with pytest.raises(P.PriorError):
        P.PriorSpec("gmm", 2, means=np.zeros((2, 2)), stds=np.ones((2, 2)), weights=[0.7, 0.7])


def test_kl_closed_form_values():
    assert P.kl_gaussian(np.zeros(3), np.zeros(3)) == 0.0
    assert P.kl_gaussian(np.array([1.0]), np.array([0.0])) == 0.5


def test_kl_tensor_matches_array_and_grad():
    mu, lv = np.array([[0.2, -0.4], [1.0, 0.3]]), np.array([[0.1, -0.5], [0.0, 0.7]])
    m, l = T.Tensor(mu.copy(), requires_grad=True), T.Tensor(lv.copy(), requires_grad=True)
    with T.Tape():
        kl = P.kl_gaussian(m, l)
    assert kl.item() == pytest.approx(P.kl_gaussian(mu, lv), abs=1e-14)
    T.backward(kl)
    assert np.allclose(m.grad, mu / 2, atol=1e-14)
    assert np.allclose(l.grad, 0.5 * (np.exp(lv) - 1) / 2, atol=1e-14)


def test_kl_non_negative(rng):
    for _ in range(100):
        mu, lv = rng.normal(size=5), rng.normal(size=5)
        assert P.kl_gaussian(mu, lv) > 0


def test_kl_monte_carlo(rng):
    for _ in range(3):
        mu, lv = rng.normal(size=4), rng.uniform(-1, 1, size=4)
        assert abs(P.kl_gaussian(mu, lv) / mc_kl(mu, lv, 1_000_000, rng) - 1) < 0.01


def test_gmm_prior_construction():
    g = P.make_gmm_prior(32, 6, seed=3)
    assert g.means.shape == (32, 6) and np.all(g.stds == 1)
    assert np.all(g.weights == 1 / 32)
    assert len({tuple(m) for m in g.means}) == 32


def test_gmm_component_usage_uniform():
    g = P.make_gmm_prior(32, 2, seed=3)
    rng = make_rng(4)
    comp = rng.choice(32, size=100_000, p=g.weights)
    counts = np.bincount(comp, minlength=32)
    assert np.all(np.abs(counts / (100_000 / 32) - 1) < 0.1)
    z = P.sample(g, 100_000, make_rng(5))
    # nearest-mean assignment of draws lands near each mean uniformly too (means far apart)
    d = ((z[:, None, :] - g.means[None]) ** 2).sum(-1)
    share = np.bincount(np.argmin(d, 1), minlength=32) / 100_000
    assert share.min() > 0
