"""Latent priors and the Gaussian KL term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .rng import make_rng

KINDS = ("gaussian", "gmm", "beta", "categorical")
BETA_CLAMP = 1e-12


class PriorError(ValueError):
    pass


@dataclass
class PriorSpec:
    kind: str
    dim: int
    means: np.ndarray | None = None    # gmm: k x dim
    stds: np.ndarray | None = None     # gmm: k x dim
    weights: np.ndarray | None = None  # gmm: k
    alpha: float = 0.01
    beta: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PriorError(f"unknown prior {self.kind!r}")
        if self.dim < 1:
            raise PriorError("prior dimension must be >= 1")
        if self.kind == "gmm":
            if self.means is None or self.stds is None or self.weights is None:
                raise PriorError("gmm prior needs means, stds and weights")
            self.means = np.asarray(self.means, dtype=np.float64)
            self.stds = np.asarray(self.stds, dtype=np.float64)
            self.weights = np.asarray(self.weights, dtype=np.float64)
            k = len(self.weights)
            if self.means.shape != (k, self.dim) or self.stds.shape != (k, self.dim):
                raise PriorError("gmm means/stds must be k x dim")
            if np.any(self.stds <= 0):
                raise PriorError("gmm stds must be positive")
            if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
                raise PriorError("gmm weights must be non-negative and sum to 1")
        if self.kind == "beta" and not (self.alpha > 0 and self.beta > 0):
            raise PriorError("beta parameters must be positive")
        if self.kind == "categorical" and self.dim < 2:
            raise PriorError("categorical prior needs k >= 2")


def gaussian(dim: int) -> PriorSpec:
    return PriorSpec("gaussian", dim)


def beta(dim: int, alpha: float = 0.01, b: float = 0.01) -> PriorSpec:
    return PriorSpec("beta", dim, alpha=alpha, beta=b)


def categorical(k: int) -> PriorSpec:
    return PriorSpec("categorical", k)


def make_gmm_prior(k: int = 32, dim: int = 128, seed: int = 0, scale: float = 3.0) -> PriorSpec:
    """``k`` equally weighted unit-variance components with means ~ N(0, scale^2 I)."""
    if k < 1 or dim < 1:
        raise PriorError("k and dim must be >= 1")
    rng = make_rng(seed)
    return PriorSpec("gmm", dim, means=rng.normal(0.0, scale, size=(k, dim)),
                     stds=np.ones((k, dim)), weights=np.full(k, 1.0 / k))


def _log_gamma_variate(shape: float, size, rng) -> np.ndarray:
    # Gamma(a) = Gamma(a + 1) * U^(1/a), kept in log space for tiny a
    g = rng.standard_gamma(shape + 1.0, size=size)
    u = rng.uniform(size=size)
    return np.log(g) + np.log(u) / shape


def sample_beta(alpha: float, b: float, size, rng) -> np.ndarray:
    """Beta draws as G1 / (G1 + G2) evaluated from log-gamma variates."""
    la = _log_gamma_variate(alpha, size, rng)
    lb = _log_gamma_variate(b, size, rng)
    d = la - lb
    x = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    return np.clip(x, BETA_CLAMP, 1.0 - BETA_CLAMP)


def sample(prior: PriorSpec, batch: int, rng: np.random.Generator) -> np.ndarray:
    if batch < 1:
        raise PriorError("batch must be >= 1")
    if prior.kind == "gaussian":
        return rng.standard_normal((batch, prior.dim))
    if prior.kind == "gmm":
        comp = rng.choice(len(prior.weights), size=batch, p=prior.weights)
        return prior.means[comp] + prior.stds[comp] * rng.standard_normal((batch, prior.dim))
    if prior.kind == "beta":
        return sample_beta(prior.alpha, prior.beta, (batch, prior.dim), rng)
    out = np.zeros((batch, prior.dim))
    out[np.arange(batch), rng.integers(0, prior.dim, size=batch)] = 1.0
    return out


def kl_gaussian(mu, logvar):
    """KL(N(mu, diag(exp(logvar))) || N(0, I)).

    Summed over the last axis and averaged over any batch axis.  Tensor
    inputs give a taped scalar, arrays give a float.
    """
    if not isinstance(mu, T.Tensor) and not isinstance(logvar, T.Tensor):
        mu, logvar = np.asarray(mu, dtype=float), np.asarray(logvar, dtype=float)
        per = 0.5 * (mu ** 2 + np.exp(logvar) - logvar - 1.0).sum(axis=-1)
        return float(np.mean(per))
    mu, logvar = T.as_tensor(mu), T.as_tensor(logvar)
    inner = T.sub(T.add(T.square(mu), T.exp(logvar)), logvar) - 1.0
    total = T.sum(inner) * 0.5
    batch = 1 if mu.data.ndim == 1 else mu.shape[0]
    return total * (1.0 / batch)
