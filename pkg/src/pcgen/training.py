"""Training regimes: plain AE, VAE, Wasserstein AAE and the categorical AAE-C.

Every optimizer update happens inside :func:`train_step`, which snapshots the
bundle first and restores it if anything non-finite shows up.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import priors as P
from . import tensor as T
from .distances import CostKind, reconstruction_loss
from .metrics import as_array, cloud_distance, normalize_samples, set_jsd
from .networks import (ConfigError, Discriminator, DiscriminatorConfig, Encoder, EncoderConfig,
                       Generator, GeneratorConfig, LatentCode, reparametrize)
from .rng import make_rng
from .tensor import Adam, NonFiniteGradientError, Tape, Tensor

MODES = ("ae", "vae", "aae", "aae_c")
SCHEDULES = ("constant", "exp_decay")
KEY_ALIASES = {"lam": "lambda"}


class TrainingError(FloatingPointError):
    """A step produced non-finite values; the bundle was rolled back."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "aae"
    recon: str = "emd"
    cost_kind: str = "squared_halved"
    recon_reduction: str = "mean"     # per-point mean of the matched cost, or its sum
    prior: str = "gaussian"
    latent_dim: int = 128
    n_points: int = 256
    enc_widths: tuple = (64, 128, 128, 256, 512)
    feature_dim: int = 512
    gen_hidden: tuple = (256, 512, 512, 1024)
    disc_hidden: tuple = (512, 512, 128, 64)
    categorical_k: int = 8
    gmm_k: int = 32
    gmm_scale: float = 3.0
    gmm_seed: int = 0
    beta_alpha: float = 0.01
    beta_beta: float = 0.01
    lam: float = 1.0
    lambda_schedule: str = "constant"
    lambda_rate: float = 0.0
    gp_weight: float = 10.0
    d_steps_per_g: int = 5
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    adam_eg: tuple = (1e-4, 0.5, 0.999)
    adam_d: tuple = (1e-4, 0.5, 0.999)

    def __post_init__(self):
        self.enc_widths = tuple(int(w) for w in self.enc_widths)
        self.gen_hidden = tuple(int(w) for w in self.gen_hidden)
        self.disc_hidden = tuple(int(w) for w in self.disc_hidden)
        self.adam_eg = tuple(float(a) for a in self.adam_eg)
        self.adam_d = tuple(float(a) for a in self.adam_d)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.recon not in ("emd", "chamfer"):
            raise ConfigError(f"recon must be emd or chamfer, got {self.recon!r}")
        CostKind(self.cost_kind)
        if self.recon_reduction not in ("mean", "sum"):
            raise ConfigError(f"recon_reduction must be mean or sum, got {self.recon_reduction!r}")
        if self.prior not in ("gaussian", "gmm", "beta"):
            raise ConfigError(f"prior must be gaussian, gmm or beta, got {self.prior!r}")
        if self.mode == "vae" and self.prior != "gaussian":
            raise ConfigError("the VAE objective uses the closed-form Gaussian KL; prior must be gaussian")
        if self.lambda_schedule not in SCHEDULES:
            raise ConfigError(f"lambda_schedule must be one of {SCHEDULES}")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if self.lambda_rate < 0:
            raise ConfigError("lambda_rate must be >= 0")
        if self.gp_weight < 0:
            raise ConfigError("gp_weight must be >= 0")
        if self.batch_size < 1 or self.d_steps_per_g < 1 or self.epochs < 0:
            raise ConfigError("batch_size and d_steps_per_g must be >= 1, epochs >= 0")
        if self.mode == "aae_c" and self.categorical_k < 2:
            raise ConfigError("categorical_k must be >= 2")
        if len(self.adam_eg) != 3 or len(self.adam_d) != 3:
            raise ConfigError("adam settings are alpha,beta1,beta2")

    @property
    def adversarial(self) -> bool:
        return self.mode in ("aae", "aae_c")

    @property
    def variational(self) -> bool:
        return self.mode == "vae" or (self.adversarial and self.prior != "beta")

    @property
    def schedule(self) -> "LambdaSchedule":
        return LambdaSchedule(self.lambda_schedule, self.lam, self.lambda_rate)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_items(cfg: TrainConfig) -> list[tuple[str, str]]:
    return [(KEY_ALIASES.get(f.name, f.name), _format_value(getattr(cfg, f.name))) for f in fields(cfg)]


def _parse_value(name: str, text: str, default):
    try:
        if isinstance(default, bool):
            if text not in ("true", "false"):
                raise ValueError(text)
            return text == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(x) for x in text.split(",") if x.strip())
        return text.strip()
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None


TRAIN_KEYS = {KEY_ALIASES.get(f.name, f.name): f.name for f in fields(TrainConfig)}


def config_from_items(items: dict[str, str], require: Sequence[str] = ()) -> TrainConfig:
    """Build a TrainConfig from string key/values; unknown keys are an error."""
    for key in require:
        if key not in items:
            raise ConfigError(f"missing required key {key!r}")
    defaults = TrainConfig()
    kwargs = {}
    for key, text in items.items():
        if key not in TRAIN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        name = TRAIN_KEYS[key]
        kwargs[name] = _parse_value(key, text, getattr(defaults, name))
    return TrainConfig(**kwargs)


@dataclass
class LambdaSchedule:
    kind: str = "constant"
    lam0: float = 1.0
    rate: float = 0.0


def lambda_at(schedule: LambdaSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.kind == "constant":
        return float(schedule.lam0)
    if schedule.kind == "exp_decay":
        return float(schedule.lam0 * math.exp(-schedule.rate * epoch))
    raise ConfigError(f"unknown lambda schedule {schedule.kind!r}")


# ---------------------------------------------------------------------------
# model bundle
# ---------------------------------------------------------------------------

def make_prior(cfg: TrainConfig) -> P.PriorSpec:
    if cfg.prior == "gaussian":
        return P.gaussian(cfg.latent_dim)
    if cfg.prior == "gmm":
        return P.make_gmm_prior(cfg.gmm_k, cfg.latent_dim, seed=cfg.gmm_seed, scale=cfg.gmm_scale)
    return P.beta(cfg.latent_dim, cfg.beta_alpha, cfg.beta_beta)


@dataclass
class ModelBundle:
    config: TrainConfig
    encoder: Encoder
    generator: Generator
    prior: P.PriorSpec
    critic: Discriminator | None = None
    critic_c: Discriminator | None = None
    optimizers: dict = field(default_factory=dict)
    rng: np.random.Generator | None = None
    epoch: int = 0
    batch: int = 0      # index of the next batch within the current epoch
    step: int = 0

    def networks(self) -> dict[str, object]:
        nets = {"encoder": self.encoder, "generator": self.generator}
        if self.critic is not None:
            nets["critic"] = self.critic
        if self.critic_c is not None:
            nets["critic_c"] = self.critic_c
        return nets

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{n}.{k}": p for n, net in self.networks().items() for k, p in net.params.items()}

    @property
    def categorical_prior(self) -> P.PriorSpec | None:
        return P.categorical(self.config.categorical_k) if self.config.mode == "aae_c" else None

    def generator_input(self, z, y=None):
        if self.config.mode != "aae_c":
            return z
        if y is None:
            raise ConfigError("the categorical model needs y next to z")
        return T.concat([T.as_tensor(z), T.as_tensor(y)], axis=-1)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Decode ``count`` prior draws into clouds [count, N, 3]."""
        if count <= 0:
            return np.zeros((0, self.config.n_points, 3))
        z = P.sample(self.prior, count, rng)
        y = P.sample(self.categorical_prior, count, rng) if self.config.mode == "aae_c" else None
        with T.no_record():
            return self.generator(self.generator_input(z, y)).data

    def decode(self, z, y=None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        with T.no_record():
            return self.generator(self.generator_input(z, y)).data

    def encode(self, clouds, rng: np.random.Generator | None = None, chunk: int = 64):
        """Codes for a set of clouds: (mu, z, y) arrays.

        ``z`` is the reparametrized draw when ``rng`` is given and the encoder
        is variational, otherwise ``mu``.
        """
        arr = as_array(clouds)
        mus, zs, ys = [], [], []
        with T.no_record():
            for i in range(0, len(arr), chunk):
                code = self.encoder(arr[i:i + chunk])
                mu = code.mu.data
                if rng is not None and code.logvar is not None:
                    z = mu + np.exp(0.5 * code.logvar.data) * rng.standard_normal(mu.shape)
                else:
                    z = mu
                mus.append(mu)
                zs.append(z)
                if code.y is not None:
                    ys.append(code.y.data)
        y = np.concatenate(ys) if ys else None
        return np.concatenate(mus), np.concatenate(zs), y


def build_bundle(cfg: TrainConfig, prior: P.PriorSpec | None = None) -> ModelBundle:
    rng = make_rng(cfg.seed)
    enc_cfg = EncoderConfig(conv_widths=cfg.enc_widths, feature_dim=cfg.feature_dim,
                            latent_dim=cfg.latent_dim, variational=cfg.variational,
                            categorical_k=cfg.categorical_k if cfg.mode == "aae_c" else None,
                            sigmoid_output=cfg.adversarial and cfg.prior == "beta")
    extra = cfg.categorical_k if cfg.mode == "aae_c" else 0
    gen_cfg = GeneratorConfig(latent_dim=cfg.latent_dim + extra, hidden=cfg.gen_hidden, n_points=cfg.n_points)
    b = ModelBundle(cfg, Encoder(enc_cfg, rng), Generator(gen_cfg, rng), prior or make_prior(cfg))
    if cfg.adversarial:
        b.critic = Discriminator(DiscriminatorConfig(cfg.latent_dim, cfg.disc_hidden), rng)
    if cfg.mode == "aae_c":
        b.critic_c = Discriminator(DiscriminatorConfig(cfg.categorical_k, cfg.disc_hidden), rng)
    b.optimizers = _make_optimizers(b)
    b.rng = rng
    return b


def _make_optimizers(b: ModelBundle) -> dict[str, Adam]:
    cfg = b.config
    eg = {f"encoder.{k}": p for k, p in b.encoder.params.items()}
    eg.update({f"generator.{k}": p for k, p in b.generator.params.items()})
    opts = {"eg": Adam(eg, *cfg.adam_eg)}
    if b.critic is not None:
        opts["d"] = Adam({f"critic.{k}": p for k, p in b.critic.params.items()}, *cfg.adam_d)
    if b.critic_c is not None:
        opts["dc"] = Adam({f"critic_c.{k}": p for k, p in b.critic_c.params.items()}, *cfg.adam_d)
    return opts


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossRecord:
    step: int
    recon: float
    adv: float      # KL for the VAE, the encoder's adversarial term for AAEs
    gp: float
    lam: float
    adv_c: float = 0.0

    def tsv(self) -> str:
        return f"{self.step}\t{self.recon!r}\t{self.adv!r}\t{self.gp!r}\t{self.lam!r}"


TSV_HEADER = "step\trecon\tadv\tgp\tlambda"


def _recon(bundle: ModelBundle, pred: Tensor, batch: np.ndarray, threads=None) -> Tensor:
    cfg = bundle.config
    loss = reconstruction_loss(pred, batch, cfg.recon, CostKind(cfg.cost_kind), threads)
    # mean keeps lambda independent of the cloud size
    return loss * (1.0 / batch.shape[1]) if cfg.recon_reduction == "mean" else loss


def _encode_latent(bundle: ModelBundle, batch: np.ndarray, noise) -> tuple[LatentCode, Tensor]:
    code = bundle.encoder(batch)
    z = reparametrize(code, noise) if code.logvar is not None else code.mu
    return code, z


def _draw_noise(bundle: ModelBundle, batch: np.ndarray, rng) -> np.ndarray | None:
    if not bundle.config.variational:
        return None
    return rng.standard_normal((len(batch), bundle.config.latent_dim))


def vae_loss(batch, bundle: ModelBundle, rng: np.random.Generator | None = None,
             lam: float | None = None, noise=None) -> tuple[Tensor, dict]:
    """KL(q(z|x) || N(0, I)) + lambda * reconstruction; taped when a tape is active."""
    batch = as_array(batch)
    lam = lambda_at(bundle.config.schedule, bundle.epoch) if lam is None else lam
    if noise is None:
        noise = (rng or bundle.rng).standard_normal((len(batch), bundle.config.latent_dim))
    code = bundle.encoder(batch)
    z = reparametrize(code, noise)
    recon = _recon(bundle, bundle.generator(z), batch)
    kl = P.kl_gaussian(code.mu, code.logvar)
    loss = kl + recon * lam
    return loss, {"recon": recon.item(), "kl": kl.item(), "lambda": lam}


def ae_loss(batch, bundle: ModelBundle, lam: float | None = None) -> tuple[Tensor, dict]:
    batch = as_array(batch)
    lam = lambda_at(bundle.config.schedule, bundle.epoch) if lam is None else lam
    recon = _recon(bundle, bundle.generator(bundle.encoder(batch).mu), batch)
    return recon * lam, {"recon": recon.item(), "lambda": lam}


def gradient_penalty(critic: Discriminator, z_real, z_fake, rng: np.random.Generator) -> Tensor:
    """mean_i (||grad D(z_hat_i)|| - 1)^2 at random interpolates of real and fake codes.

    The inner gradient is taken with ``create_graph=True`` so the penalty can
    itself be differentiated with respect to the critic parameters.
    """
    real = np.asarray(getattr(z_real, "data", z_real), dtype=np.float64)
    fake = np.asarray(getattr(z_fake, "data", z_fake), dtype=np.float64)
    if real.shape != fake.shape or real.ndim != 2:
        raise ConfigError(f"gradient penalty needs equal [B, k] batches, got {real.shape} and {fake.shape}")
    u = rng.uniform(size=(len(real), 1))
    z_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    with (_Nothing() if T.recording() else T.fresh_tape()):
        scores = critic(z_hat)
        (g,) = T.grad(T.sum(scores), [z_hat], create_graph=True)
        norms = T.sqrt(T.sum(T.square(g), axis=1))
        return T.mean(T.square(norms - 1.0))


class _Nothing:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def aae_eg_loss(batch, bundle: ModelBundle, noise, lam: float, categorical: bool = False,
                threads=None) -> tuple[Tensor, dict]:
    """lambda * recon - mean D(z)  [ - mean D_c(y) ]: the encoder+generator objective."""
    batch = as_array(batch)
    code, z = _encode_latent(bundle, batch, noise)
    recon = _recon(bundle, bundle.generator(bundle.generator_input(z, code.y)), batch, threads)
    adv = -T.mean(bundle.critic(z))
    loss = recon * lam + adv
    adv_c = 0.0
    if categorical:
        adv_c_t = -T.mean(bundle.critic_c(code.y))
        loss = loss + adv_c_t
        adv_c = adv_c_t.item()
    return loss, {"recon": recon.item(), "adv": adv.item(), "adv_c": adv_c}


def critic_loss(critic: Discriminator, z_real, z_fake, gp_weight: float, rng) -> tuple[Tensor, float]:
    """mean D(fake) - mean D(real) + gp_weight * GP."""
    w = T.mean(critic(z_fake)) - T.mean(critic(z_real))
    if gp_weight > 0:
        gp = gradient_penalty(critic, z_real, z_fake, rng)
        return w + gp * gp_weight, gp.item()
    return w, 0.0


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------

def _snapshot(bundle: ModelBundle):
    params = {k: p.data.copy() for k, p in bundle.named_parameters().items()}
    opts = {k: copy.deepcopy(o.state) for k, o in bundle.optimizers.items()}
    return params, opts, copy.deepcopy(bundle.rng.bit_generator.state), (bundle.epoch, bundle.batch, bundle.step)


def _restore(bundle: ModelBundle, snap):
    params, opts, rng_state, counters = snap
    for k, p in bundle.named_parameters().items():
        p.data = params[k]
        p.grad = None
    for k, o in bundle.optimizers.items():
        o.state = opts[k]
    bundle.rng.bit_generator.state = rng_state
    bundle.epoch, bundle.batch, bundle.step = counters


def _finite(*values) -> bool:
    return all(np.isfinite(v) for v in values)


def _update(opt: Adam, loss: Tensor, what: str):
    if not np.isfinite(loss.item()):
        raise TrainingError(f"non-finite {what} loss")
    opt.zero_grad()
    T.backward(loss)
    opt.step()
    if loss.tape is not None:
        loss.tape.release()


def _critic_round(bundle, critic, opt, real_fn, fake, rng):
    cfg = bundle.config
    gp = 0.0
    for _ in range(cfg.d_steps_per_g):
        real = real_fn(len(fake))
        with Tape():
            loss, gp = critic_loss(critic, real, fake, cfg.gp_weight, rng)
        _update(opt, loss, "critic")
    return gp


def _adversarial_step(bundle: ModelBundle, batch: np.ndarray, categorical: bool,
                      threads=None) -> LossRecord:
    cfg, rng = bundle.config, bundle.rng
    lam = lambda_at(cfg.schedule, bundle.epoch)
    noise = _draw_noise(bundle, batch, rng)
    with T.no_record():
        code, z = _encode_latent(bundle, batch, noise)
    # (1) critic updates against the current, frozen encoder
    gp = _critic_round(bundle, bundle.critic, bundle.optimizers["d"],
                       lambda n: P.sample(bundle.prior, n, rng), z.data, rng)
    gp_c = 0.0
    if categorical:
        cat = bundle.categorical_prior
        gp_c = _critic_round(bundle, bundle.critic_c, bundle.optimizers["dc"],
                             lambda n: P.sample(cat, n, rng), code.y.data, rng)
    # (2) encoder + generator update
    with Tape():
        loss, parts = aae_eg_loss(batch, bundle, noise, lam, categorical, threads)
    _update(bundle.optimizers["eg"], loss, "encoder/generator")
    return LossRecord(bundle.step, parts["recon"], parts["adv"], gp, lam, parts["adv_c"])


def _plain_step(bundle: ModelBundle, batch: np.ndarray) -> LossRecord:
    cfg = bundle.config
    lam = lambda_at(cfg.schedule, bundle.epoch)
    with Tape():
        if cfg.mode == "vae":
            loss, parts = vae_loss(batch, bundle, lam=lam)
            adv = parts["kl"]
        else:
            loss, parts = ae_loss(batch, bundle, lam=lam)
            adv = 0.0
    _update(bundle.optimizers["eg"], loss, cfg.mode)
    return LossRecord(bundle.step, parts["recon"], adv, 0.0, lam)


def _guarded(bundle: ModelBundle, fn) -> LossRecord:
    snap = _snapshot(bundle)
    try:
        rec = fn()
        bad = [k for k, p in bundle.named_parameters().items() if not np.all(np.isfinite(p.data))]
        if bad or not _finite(rec.recon, rec.adv, rec.gp):
            raise TrainingError(f"non-finite values after step {bundle.step}: {bad[:3] or 'loss'}")
    except (TrainingError, NonFiniteGradientError, FloatingPointError) as e:
        _restore(bundle, snap)
        raise TrainingError(str(e)) from e
    bundle.step += 1
    return rec


def aae_step(batch, bundle: ModelBundle, threads=None) -> LossRecord:
    """Critic updates followed by one encoder+generator update (no categorical game)."""
    batch = as_array(batch)
    if not bundle.config.adversarial:
        raise ConfigError("aae_step needs an adversarial bundle")
    return _guarded(bundle, lambda: _adversarial_step(bundle, batch, False, threads))


def aae_c_step(batch, bundle: ModelBundle, threads=None) -> LossRecord:
    batch = as_array(batch)
    if bundle.config.mode != "aae_c":
        raise ConfigError("aae_c_step needs mode aae_c")
    return _guarded(bundle, lambda: _adversarial_step(bundle, batch, True, threads))


def plain_step(batch, bundle: ModelBundle) -> LossRecord:
    batch = as_array(batch)
    if bundle.config.mode not in ("ae", "vae"):
        raise ConfigError("plain_step is for ae / vae bundles")
    return _guarded(bundle, lambda: _plain_step(bundle, batch))


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Batch order of an epoch; depends only on (seed, epoch) so runs resume mid-epoch."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch]))).permutation(n)


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, -(-n // batch_size))


def train_step(bundle: ModelBundle, data: np.ndarray, threads=None) -> LossRecord:
    """Run the next batch of the current epoch and advance the counters."""
    cfg = bundle.config
    if len(data) == 0:
        raise ConfigError("empty training set")
    order = epoch_order(cfg.seed, bundle.epoch, len(data))
    idx = order[bundle.batch * cfg.batch_size:(bundle.batch + 1) * cfg.batch_size]
    batch = data[idx]
    if cfg.mode == "aae_c":
        rec = aae_c_step(batch, bundle, threads)
    elif cfg.mode == "aae":
        rec = aae_step(batch, bundle, threads)
    else:
        rec = plain_step(batch, bundle)
    bundle.batch += 1
    if bundle.batch >= batches_per_epoch(len(data), cfg.batch_size):
        bundle.batch = 0
        bundle.epoch += 1
    return rec


def fit(bundle: ModelBundle, data, epochs: int | None = None, steps: int | None = None,
        on_epoch=None, threads=None) -> list[LossRecord]:
    """Train for a number of further steps, or until ``epochs`` total epochs are done.

    ``on_epoch(bundle)`` is called after every completed epoch.
    """
    data = as_array(data)
    if data.shape[1] != bundle.config.n_points:
        raise ConfigError(f"clouds have {data.shape[1]} points, model expects {bundle.config.n_points}")
    target = bundle.config.epochs if epochs is None and steps is None else epochs
    log = []
    while True:
        if steps is not None and len(log) >= steps:
            break
        if steps is None and bundle.epoch >= target:
            break
        epoch = bundle.epoch
        log.append(train_step(bundle, data, threads))
        if on_epoch is not None and bundle.epoch != epoch:
            on_epoch(bundle)
    return log


def reconstruction_emd(bundle: ModelBundle, clouds, chunk: int = 64) -> float:
    """Mean per-point unsquared EMD between clouds and their reconstructions (via mu)."""
    arr = as_array(clouds)
    mu, _, y = bundle.encode(arr, chunk=chunk)
    rec = bundle.decode(mu, y)
    return float(np.mean([cloud_distance(rec[i], arr[i], "emd") for i in range(len(arr))]))


def select_best(checkpoints: Sequence, validation_set, multiplier: int = 3, seed: int = 0):
    """The checkpoint whose samples have the lowest JSD to the validation set.

    Entries are bundles, checkpoint paths or any object with ``sample``.
    Ties go to the earliest epoch.  Returns ``(chosen, scores)``.
    """
    from .checkpoint import load

    val = as_array(validation_set)
    if len(val) == 0:
        raise ConfigError("empty validation set")
    if not checkpoints:
        raise ConfigError("no checkpoints to choose from")
    loaded = [load(c) if isinstance(c, (str, bytes)) or hasattr(c, "__fspath__") else c for c in checkpoints]
    scores = []
    for c in loaded:
        samples = c.sample(multiplier * len(val), make_rng(seed))
        scores.append(set_jsd(normalize_samples(samples), val))
    key = [(s, getattr(c, "epoch", i), i) for i, (s, c) in enumerate(zip(scores, loaded))]
    best = min(range(len(loaded)), key=lambda i: key[i])
    return loaded[best], scores


def checkpoint_save(bundle: ModelBundle, path) -> None:
    from .checkpoint import save
    save(bundle, path)


def checkpoint_load(path) -> ModelBundle:
    from .checkpoint import load
    return load(path)
