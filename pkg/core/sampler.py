"""
Sampler
Reproducible RNG streams, the hierarchical NIG sampler, the Gaussian baseline
sampler and its KL loss against N(y, I).

Streams:
  RngStream(seed, stream_id) wraps a Philox counter generator keyed by
  SeedSequence(seed, spawn_key=(stream_id,)). Equal pairs give equal draws;
  distinct stream ids give independent streams. Gamma variates come from
  numpy's standard_gamma, which uses the Marsaglia-Tsang squeeze for shape >= 1.

Hierarchical draw (per dimension):
  sigma2 ~ InvGamma(alpha, beta_scale * beta)
  mu     ~ N(gamma, sigma2 / nu)
  z      ~ N(mu, sigma2)
"""

from __future__ import annotations
import logging
from dataclasses import dataclass

import numpy as np

from core import numerics as nx
from core.errors import ConfigError, DataError
from core.nig import NIGParams

logger = logging.getLogger(__name__)

LOG_SIGMA2_FLOOR = -30.0

# Stream ids reserved by the pipeline; per-item streams are offset from these.
STREAM_CORPUS_TRANSFORMS = 1
STREAM_CORPUS_BASIS = 2
STREAM_INIT = 3
STREAM_TRAIN = 1 << 20
STREAM_GENERATE = 1 << 32
STREAM_CORPUS_RENDER = 1 << 40


class RngStream:
    """Counter-based random stream identified by (seed, stream_id)."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, offset: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + int(offset))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.uniform(size=size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size=size)

    def standard_gamma(self, shape) -> np.ndarray:
        return self._gen.standard_gamma(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def inverse_gamma(self, alpha, beta) -> np.ndarray:
        return np.asarray(beta, dtype=np.float64) / self.standard_gamma(np.asarray(alpha, dtype=np.float64))


class ReplayRng:
    """
    RNG wrapper that records every draw and replays the same values, in call
    order, on later passes. Used to hold sampling noise fixed while a loss is
    re-evaluated at perturbed parameters.
    """

    def __init__(self, base: RngStream):
        self.base = base
        self._draws: list[np.ndarray] = []
        self._cursor = 0

    def rewind(self):
        self._cursor = 0

    def _take(self, fn, *args) -> np.ndarray:
        if self._cursor < len(self._draws):
            value = self._draws[self._cursor]
        else:
            value = np.asarray(fn(*args))
            self._draws.append(value)
        self._cursor += 1
        return value

    def uniform(self, size=None):
        return self._take(self.base.uniform, size)

    def normal(self, size=None):
        return self._take(self.base.normal, size)

    def standard_gamma(self, shape):
        return self._take(self.base.standard_gamma, shape)

    def integers(self, low, high, size=None):
        return self._take(self.base.integers, low, high, size)

    def inverse_gamma(self, alpha, beta):
        return self._take(self.base.inverse_gamma, alpha, beta)


@dataclass(frozen=True)
class GaussianHead:
    mu: np.ndarray
    log_sigma2: np.ndarray


def sample_inverse_gamma(alpha, beta, rng: RngStream) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(alpha <= 1) or np.any(beta <= 0):
        raise DataError("sample_inverse_gamma: need alpha > 1 and beta > 0")
    return rng.inverse_gamma(alpha, beta)


def sample_hierarchical(p: NIGParams, rng: RngStream, beta_scale: float = 1.0) -> np.ndarray:
    if beta_scale <= 0:
        raise ConfigError(f"sample_hierarchical: beta_scale must be positive, got {beta_scale}")
    sigma2 = sample_inverse_gamma(p.alpha, beta_scale * p.beta, rng)
    mu = p.gamma + np.sqrt(sigma2 / p.nu) * rng.normal(p.gamma.shape)
    return mu + np.sqrt(sigma2) * rng.normal(p.gamma.shape)


def sample_hierarchical_tensor(gamma: nx.Tensor, nu: nx.Tensor, alpha: nx.Tensor,
                               beta: nx.Tensor, rng) -> nx.Tensor:
    """
    Training-time draw: sigma2 is a non-differentiable InvGamma sample, the two
    Gaussian stages are pathwise, so z carries gradients to gamma and nu only.
    """
    sigma2 = rng.inverse_gamma(alpha.data, beta.data)
    sigma = np.sqrt(sigma2)
    eps1 = rng.normal(gamma.shape)
    eps2 = rng.normal(gamma.shape)
    mu = nx.add(gamma, nx.div(sigma * eps1, nx.sqrt(nu)))
    return nx.add(mu, sigma * eps2)


def sample_gaussian_baseline(h: GaussianHead, rng: RngStream) -> np.ndarray:
    log_s2 = np.maximum(np.asarray(h.log_sigma2, dtype=np.float64), LOG_SIGMA2_FLOOR)
    eps = rng.normal(np.shape(h.mu))
    return np.asarray(h.mu) + np.exp(0.5 * log_s2) * eps


def sample_gaussian_tensor(mu: nx.Tensor, log_sigma2: nx.Tensor, rng) -> nx.Tensor:
    """Reparameterized z = mu + exp(log_sigma2 / 2) * eps."""
    eps = rng.normal(mu.shape)
    sigma = nx.exp(nx.mul(nx.clip(log_sigma2, LOG_SIGMA2_FLOOR, None), 0.5))
    return nx.add(mu, nx.mul(sigma, eps))


def kl_gaussian_to_prior(h: GaussianHead, y_gt) -> float:
    """KL( N(mu, sigma2) || N(y_gt, I) ), summed over dimensions."""
    log_s2 = np.maximum(np.asarray(h.log_sigma2, dtype=np.float64), LOG_SIGMA2_FLOOR)
    diff = np.asarray(h.mu) - np.asarray(y_gt)
    return float(np.sum(0.5 * (np.exp(log_s2) + diff ** 2 - 1.0 - log_s2)))


def kl_gaussian_tensor(mu: nx.Tensor, log_sigma2: nx.Tensor, y_gt) -> nx.Tensor:
    """Tape version of kl_gaussian_to_prior over (T, D): summed over D, mean over T."""
    log_s2 = nx.clip(log_sigma2, LOG_SIGMA2_FLOOR, None)
    diff = nx.sub(mu, y_gt)
    per = nx.mul(nx.sub(nx.add(nx.exp(log_s2), nx.square(diff)), nx.add(log_s2, 1.0)), 0.5)
    frames = mu.shape[0] if mu.ndim > 1 else 1
    return nx.mul(nx.sum_(per), 1.0 / frames)
