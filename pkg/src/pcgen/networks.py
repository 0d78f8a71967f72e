"""PointNet-style encoder, fully connected generator and critic."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOGVAR_RANGE = (-10.0, 10.0)


class ConfigError(ValueError):
    pass


def _check_widths(name, widths):
    if any(int(w) < 1 for w in widths):
        raise ConfigError(f"{name} widths must be >= 1, got {widths}")


@dataclass
class EncoderConfig:
    conv_widths: tuple = (64, 128, 128, 256, 512)
    feature_dim: int = 512
    latent_dim: int = 128
    variational: bool = True
    categorical_k: int | None = None
    sigmoid_output: bool = False   # deterministic codes in (0, 1), for Beta priors
    in_dim: int = 3

    def __post_init__(self):
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        if len(self.conv_widths) != 5:
            raise ConfigError("the encoder has exactly five per-point layers")
        _check_widths("encoder", self.conv_widths + (self.feature_dim, self.latent_dim))
        if self.categorical_k is not None and self.categorical_k < 2:
            raise ConfigError("categorical_k must be >= 2")
        if self.variational and self.sigmoid_output:
            raise ConfigError("sigmoid output is for deterministic encoders")


@dataclass
class GeneratorConfig:
    latent_dim: int = 128
    hidden: tuple = (256, 512, 512, 1024)
    n_points: int = 256

    def __post_init__(self):
        self.hidden = tuple(int(w) for w in self.hidden)
        if len(self.hidden) != 4:
            raise ConfigError("the generator has five layers: four hidden plus the output")
        _check_widths("generator", self.hidden + (self.latent_dim, self.n_points))


@dataclass
class DiscriminatorConfig:
    in_dim: int = 128
    hidden: tuple = (512, 512, 128, 64)

    def __post_init__(self):
        self.hidden = tuple(int(w) for w in self.hidden)
        if len(self.hidden) != 4:
            raise ConfigError("the discriminator has five layers: four hidden plus the output")
        _check_widths("discriminator", self.hidden + (self.in_dim,))


@dataclass
class LatentCode:
    mu: Tensor
    logvar: Tensor | None = None
    y: Tensor | None = None


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Network:
    """Named parameter container with dense layers ``<name>.w`` / ``<name>.b``."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _dense(self, name: str, fan_in: int, fan_out: int, rng):
        self.params[f"{name}.w"] = Tensor(glorot(fan_in, fan_out, rng), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def _apply(self, name: str, x: Tensor) -> Tensor:
        return T.shared_pointwise_linear(x, self.params[f"{name}.w"], self.params[f"{name}.b"])

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        if set(state) != set(self.params):
            raise ConfigError(f"parameter names differ: {sorted(set(state) ^ set(self.params))}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ConfigError(f"{k}: shape {v.shape} does not match {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


class Encoder(Network):
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        widths = (config.in_dim,) + config.conv_widths
        for i in range(5):
            self._dense(f"conv{i}", widths[i], widths[i + 1], rng)
        self._dense("fc", widths[-1], config.feature_dim, rng)
        self._dense("mu", config.feature_dim, config.latent_dim, rng)
        if config.variational:
            self._dense("logvar", config.feature_dim, config.latent_dim, rng)
        if config.categorical_k:
            self._dense("cat", config.feature_dim, config.categorical_k, rng)

    def __call__(self, x) -> LatentCode:
        x = T.as_tensor(x)
        if x.data.ndim not in (2, 3) or x.shape[-1] != self.config.in_dim or x.shape[-2] < 1:
            raise ConfigError(f"encoder expects [B, N, {self.config.in_dim}] input, got {x.shape}")
        h = x
        for i in range(5):
            h = T.relu(self._apply(f"conv{i}", h))
        h = T.relu(self._apply("fc", T.reduce_max_points(h)))
        mu = self._apply("mu", h)
        if self.config.sigmoid_output:
            mu = T.sigmoid(mu)
        logvar = T.clip(self._apply("logvar", h), *LOGVAR_RANGE) if self.config.variational else None
        y = T.softmax(self._apply("cat", h)) if self.config.categorical_k else None
        return LatentCode(mu, logvar, y)


class Generator(Network):
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        widths = (config.latent_dim,) + config.hidden + (3 * config.n_points,)
        for i in range(5):
            self._dense(f"fc{i}", widths[i], widths[i + 1], rng)

    def __call__(self, z) -> Tensor:
        z = T.as_tensor(z)
        single = z.data.ndim == 1
        h = T.reshape(z, (1, -1)) if single else z
        if h.shape[-1] != self.config.latent_dim:
            raise ConfigError(f"generator expects latent width {self.config.latent_dim}, got {h.shape[-1]}")
        if not np.all(np.isfinite(h.data)):
            raise FloatingPointError("non-finite latent code")
        for i in range(4):
            h = T.relu(self._apply(f"fc{i}", h))
        out = T.reshape(self._apply("fc4", h), (h.shape[0], self.config.n_points, 3))
        return T.reshape(out, (self.config.n_points, 3)) if single else out


class Discriminator(Network):
    """Critic with a linear scalar output."""

    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        widths = (config.in_dim,) + config.hidden + (1,)
        for i in range(5):
            self._dense(f"fc{i}", widths[i], widths[i + 1], rng)

    def __call__(self, z) -> Tensor:
        z = T.as_tensor(z)
        single = z.data.ndim == 1
        h = T.reshape(z, (1, -1)) if single else z
        if h.shape[-1] != self.config.in_dim:
            raise ConfigError(f"discriminator expects width {self.config.in_dim}, got {h.shape[-1]}")
        for i in range(4):
            h = T.relu(self._apply(f"fc{i}", h))
        out = T.reshape(self._apply("fc4", h), (h.shape[0],))
        return T.reshape(out, ()) if single else out


def encode(cloud, encoder: Encoder) -> LatentCode:
    pts = getattr(cloud, "points", cloud)
    return encoder(pts)


def reparametrize(code: LatentCode, noise) -> Tensor:
    """``mu + exp(logvar / 2) * noise``."""
    if code.logvar is None:
        raise ConfigError("reparametrization needs a variational code (logvar missing)")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != code.mu.shape:
        raise ConfigError(f"noise shape {noise.shape} does not match code {code.mu.shape}")
    return T.add(code.mu, T.mul(T.exp(T.mul(code.logvar, 0.5)), Tensor(noise)))


def decode(z, generator: Generator) -> Tensor:
    return generator(z)


def discriminate(z, critic: Discriminator) -> Tensor:
    return critic(z)
