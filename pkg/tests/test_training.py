import math

import numpy as np
import pytest

from helpers import central_diff, rel_err
from pcgen import checkpoint
from pcgen import tensor as T
from pcgen.metrics import FixedSetGenerator, UniformNoiseGenerator, normalize_samples
from pcgen.networks import ConfigError, Discriminator, DiscriminatorConfig, LatentCode
from pcgen.pointcloud import synth_families
from pcgen.rng import make_rng
from pcgen.tensor import Tape, Tensor
from pcgen import training as TR

TINY = dict(latent_dim=3, enc_widths=(4, 5, 5, 6, 6), feature_dim=5, gen_hidden=(5, 6, 6, 7),
            disc_hidden=(5, 5, 4, 3), batch_size=4)


def tiny(mode="aae", n_points=2, **kw):
    return TR.build_bundle(TR.TrainConfig(mode=mode, n_points=n_points, **{**TINY, **kw}))


def toy_data(m=4, n=2, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, size=(m, n, 3))


def jitter_biases(bundle, seed=7):
    r = np.random.default_rng(seed)
    for name, p in bundle.named_parameters().items():
        if name.endswith(".b"):
            p.data = r.normal(scale=0.1, size=p.shape)


def param_fd(bundle, loss_fn, names=None, per_block=4, seed=0):
    """Relative error between taped and central-difference parameter gradients."""
    params = bundle.named_parameters()
    for p in params.values():
        p.grad = None
    with Tape():
        loss = loss_fn()
    T.backward(loss)
    r = np.random.default_rng(seed)
    worst = 0.0
    for name in names or params:
        p = params[name]
        flat = p.data.reshape(-1)
        picks = r.choice(flat.size, size=min(per_block, flat.size), replace=False)
        num = []
        for k in picks:
            old = flat[k]
            flat[k] = old + 1e-6
            with T.no_record():
                fp = loss_fn().item()
            flat[k] = old - 1e-6
            with T.no_record():
                fm = loss_fn().item()
            flat[k] = old
            num.append((fp - fm) / 2e-6)
        got = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        worst = max(worst, rel_err(got[picks], num))
    return worst


# ---------------------------------------------------------------------------
# lambda schedule and config
# ---------------------------------------------------------------------------

def test_lambda_schedules():
    assert TR.lambda_at(TR.LambdaSchedule("constant", 2.0), 37) == 2.0
    assert TR.lambda_at(TR.LambdaSchedule("exp_decay", 2.0, 0.0), 50) == 2.0
    assert TR.lambda_at(TR.LambdaSchedule("exp_decay", 2.0, 0.1), 10) == pytest.approx(2 * math.exp(-1), abs=1e-15)
    assert TR.lambda_at(TR.LambdaSchedule("exp_decay", 2.0, 0.1), 10) == pytest.approx(0.7358, abs=1e-4)
    with pytest.raises(ValueError):
        TR.lambda_at(TR.LambdaSchedule(), -1)


def test_config_roundtrip_and_validation():
    cfg = TR.TrainConfig(mode="aae_c", lam=2.5, enc_widths=(1, 2, 3, 4, 5), adam_d=(3e-4, 0.5, 0.9))
    back = TR.config_from_items(dict(TR.config_items(cfg)))
    assert back == cfg
    with pytest.raises(ConfigError, match="unknown key"):
        TR.config_from_items({"mood": "ae"})
    with pytest.raises(ConfigError, match="mode"):
        TR.config_from_items({"lambda": "1"}, require=("mode",))
    for bad in (dict(lam=0.0), dict(gp_weight=-1.0), dict(batch_size=0), dict(mode="gan"),
                dict(mode="vae", prior="beta")):
        with pytest.raises(ConfigError):
            TR.TrainConfig(**bad)


# ---------------------------------------------------------------------------
# VAE objective
# ---------------------------------------------------------------------------

def test_vae_loss_zero_for_perfect_stub():
    b = tiny("vae")
    batch = toy_data()
    b.encoder = lambda x: LatentCode(Tensor(np.zeros((len(x), 3))), Tensor(np.zeros((len(x), 3))))
    b.generator = lambda z: Tensor(batch)
    loss, parts = TR.vae_loss(batch, b, make_rng(0))
    assert loss.item() == 0.0 and parts["kl"] == 0.0 and parts["recon"] == 0.0


def test_lambda_scales_reconstruction_linearly():
    b = tiny("vae")
    batch = toy_data()
    noise = np.random.default_rng(1).standard_normal((4, 3))
    _, p1 = TR.vae_loss(batch, b, lam=1.0, noise=noise)
    l1, _ = TR.vae_loss(batch, b, lam=1.0, noise=noise)
    l2, p2 = TR.vae_loss(batch, b, lam=2.0, noise=noise)
    assert p1["kl"] == p2["kl"] and p1["recon"] == p2["recon"]
    assert (l2.item() - p2["kl"]) == pytest.approx(2 * (l1.item() - p1["kl"]), rel=1e-15)

    a = tiny("ae")
    grads = {}
    for lam in (2.0, 4.0):
        a.encoder.zero_grad()
        a.generator.zero_grad()
        with Tape():
            loss, _ = TR.ae_loss(batch, a, lam=lam)
        T.backward(loss)
        grads[lam] = {k: p.grad.copy() for k, p in a.named_parameters().items()}
    for k in grads[2.0]:
        assert np.array_equal(grads[4.0][k], 2 * grads[2.0][k])


@pytest.mark.parametrize("cost", ["squared_halved", "unsquared"])
def test_vae_loss_gradient_matches_finite_differences(cost):
    b = tiny("vae", cost_kind=cost)
    jitter_biases(b)
    batch = toy_data()
    noise = np.random.default_rng(2).standard_normal((4, 3))
    assert param_fd(b, lambda: TR.vae_loss(batch, b, lam=1.5, noise=noise)[0]) < 1e-4


# ---------------------------------------------------------------------------
# gradient penalty
# ---------------------------------------------------------------------------

class LinearCritic:
    def __init__(self, w):
        self.w = Tensor(np.asarray(w, dtype=float).reshape(-1, 1))

    def __call__(self, z):
        z = T.as_tensor(z)
        return T.reshape(T.matmul(z, self.w), (z.shape[0],))


def test_gradient_penalty_closed_forms(rng):
    real, fake = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    zero = Discriminator(DiscriminatorConfig(3, (4, 4, 4, 4)), make_rng(0))
    for p in zero.params.values():
        p.data = np.zeros_like(p.data)
    zero.params["fc4.b"].data = np.array([0.7])
    assert TR.gradient_penalty(zero, real, fake, make_rng(1)).item() == 1.0
    assert TR.gradient_penalty(LinearCritic([1, 0, 0]), real, fake, make_rng(1)).item() == 0.0
    w = np.array([0.3, -2.0, 0.5])
    gp = TR.gradient_penalty(LinearCritic(w), real, fake, make_rng(1)).item()
    assert gp == pytest.approx((np.linalg.norm(w) - 1) ** 2, rel=1e-14)


def test_gradient_penalty_inner_gradient_matches_fd(rng):
    critic = Discriminator(DiscriminatorConfig(4, (6, 5, 5, 3)), make_rng(3))
    for p in critic.params.values():
        if p.data.ndim == 1:
            p.data = rng.normal(scale=0.1, size=p.shape)
    z = rng.normal(size=(5, 4))
    zt = Tensor(z.copy(), requires_grad=True)
    with Tape():
        (g,) = T.grad(T.sum(critic(zt)), [zt], create_graph=True)
    num = central_diff(lambda: float(np.sum(critic(z).data)), z, h=1e-6)
    assert rel_err(g.data, num) < 1e-4


def test_gradient_penalty_outer_gradient_matches_fd(rng):
    b = tiny("aae")
    jitter_biases(b)
    real, fake = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    assert param_fd(b, lambda: TR.gradient_penalty(b.critic, real, fake, make_rng(4)),
                    names=[k for k in b.named_parameters() if k.startswith("critic.")]) < 1e-4
    with pytest.raises(ConfigError):
        TR.gradient_penalty(b.critic, real, fake[:3], make_rng(0))


# ---------------------------------------------------------------------------
# adversarial steps
# ---------------------------------------------------------------------------

def test_aae_eg_loss_gradient_matches_fd():
    b = tiny("aae", cost_kind="unsquared")
    jitter_biases(b)
    batch = toy_data()
    noise = np.random.default_rng(5).standard_normal((4, 3))
    names = [k for k in b.named_parameters() if not k.startswith("critic.")]
    assert param_fd(b, lambda: TR.aae_eg_loss(batch, b, noise, 2.0)[0], names=names) < 1e-4


def test_zero_critic_leaves_only_reconstruction():
    b = tiny("aae", gp_weight=0.0)
    for p in b.critic.params.values():
        p.data = np.zeros_like(p.data)
    batch = toy_data()
    noise = np.random.default_rng(6).standard_normal((4, 3))
    with Tape():
        loss, c = TR.critic_loss(b.critic, np.ones((4, 3)), noise, 0.0, make_rng(0))
    assert loss.item() == 0.0 and c == 0.0
    with Tape():
        eg, parts = TR.aae_eg_loss(batch, b, noise, 1.0)
    assert parts["adv"] == 0.0 and eg.item() == parts["recon"]


def test_aae_c_with_zero_categorical_critic_reduces_to_aae():
    b = tiny("aae_c", categorical_k=3, n_points=4)
    for p in b.critic_c.params.values():
        p.data = np.zeros_like(p.data)
    other = checkpoint.loads(checkpoint.dumps(b))
    batch = toy_data(4, 4)
    TR.aae_c_step(batch, b)
    TR.aae_step(batch, other)
    for k, p in other.named_parameters().items():
        mine = b.named_parameters()[k].data
        assert np.array_equal(mine, p.data), k


def test_aae_smoke_run_reduces_reconstruction():
    data = synth_families(["sphere", "box"], 4, n_points=16).array()
    b = TR.build_bundle(TR.TrainConfig(mode="aae", n_points=16, latent_dim=4, enc_widths=(16, 16, 16, 32, 32),
                                       feature_dim=32, gen_hidden=(32, 32, 64, 64), disc_hidden=(16, 16, 8, 8),
                                       batch_size=8, d_steps_per_g=2, adam_eg=(1e-3, 0.5, 0.999)))
    start = TR.reconstruction_emd(b, data)
    log = TR.fit(b, data, steps=200)
    assert len(log) == 200 and b.step == 200
    assert TR.reconstruction_emd(b, data) < start


def test_categorical_heads_specialize_per_family():
    ds = synth_families(["sphere", "torus", "chair"], 8, n_points=32)
    data, labels = ds.array(), np.array(ds.labels)
    b = TR.build_bundle(TR.TrainConfig(mode="aae_c", n_points=32, latent_dim=4, categorical_k=3,
                                       enc_widths=(16, 16, 16, 32, 32), feature_dim=32, gen_hidden=(32, 32, 64, 64),
                                       disc_hidden=(16, 16, 8, 8), batch_size=8, adam_eg=(1e-3, 0.5, 0.999),
                                       adam_d=(1e-3, 0.5, 0.999), cost_kind="unsquared", seed=1))
    TR.fit(b, data, epochs=30)
    _, _, y = b.encode(data)
    for fam in np.unique(labels):
        p = y[labels == fam].mean(0)
        assert -(p * np.log(p)).sum() < math.log(3)


def test_recon_reduction_divides_by_cloud_size():
    data = toy_data(4, 5)
    noise = np.random.default_rng(3).standard_normal((4, 3))
    _, ps = TR.vae_loss(data, tiny("vae", n_points=5, recon_reduction="sum"), lam=1.0, noise=noise)
    _, pm = TR.vae_loss(data, tiny("vae", n_points=5), lam=1.0, noise=noise)
    assert pm["recon"] == pytest.approx(ps["recon"] / 5, rel=1e-14)
    with pytest.raises(ConfigError):
        TR.TrainConfig(recon_reduction="median")


def test_categorical_rows_stay_normalized():
    data = toy_data(8, 4)
    b = tiny("aae_c", categorical_k=4, n_points=4)
    for _ in range(6):
        TR.train_step(b, data)
        _, _, y = b.encode(data)
        assert np.allclose(y.sum(1), 1.0, atol=1e-12)


def test_non_finite_step_rolls_back():
    b = tiny("aae", n_points=2)
    before = checkpoint.dumps(b)
    bad = toy_data()
    bad[0, 0, 0] = np.nan
    with pytest.raises(TR.TrainingError):
        TR.aae_step(bad, b)
    assert checkpoint.dumps(b) == before


def test_training_is_seed_deterministic():
    data = toy_data(6, 4)
    logs = []
    for _ in range(2):
        b = tiny("aae_c", categorical_k=3, n_points=4)
        logs.append([r.tsv() for r in TR.fit(b, data, steps=5)])
    assert logs[0] == logs[1]


def test_fit_counts_epochs_and_calls_back():
    data = toy_data(10, 2)
    b = tiny("ae")
    seen = []
    TR.fit(b, data, epochs=2, on_epoch=lambda bb: seen.append(bb.epoch))
    assert seen == [1, 2] and b.step == 2 * 3


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def test_select_best():
    val = normalize_samples(np.random.default_rng(0).uniform(-0.5, 0.5, size=(5, 32, 3)) * [1, 0.2, 0.2])
    own, noise = FixedSetGenerator(val), UniformNoiseGenerator(32)
    chosen, _ = TR.select_best([own], val)
    assert chosen is own
    chosen, scores = TR.select_best([noise, own], val)
    assert chosen is own and scores[1] < scores[0]
    assert TR.select_best([noise, own], val)[1] == scores
    twin = FixedSetGenerator(val)
    assert TR.select_best([own, twin], val)[0] is own
    with pytest.raises(ConfigError):
        TR.select_best([own], val[:0])
