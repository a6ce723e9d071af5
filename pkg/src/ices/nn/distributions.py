"""Diagonal Gaussians and categoricals on top of the autodiff tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DimensionError, NumericError, Tensor

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 10.0
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian; leading axes are batch axes, the last is latent_dim."""

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_var.shape:
            raise DimensionError(f"mean {self.mean.shape} vs log_var {self.log_var.shape}")

    @classmethod
    def from_head(cls, head: Tensor) -> "LatentGaussian":
        """Split a ``(..., 2*latent_dim)`` network output and clamp log-variance."""
        d = head.shape[-1] // 2
        return cls(head[..., :d], T.clip(head[..., d:], LOG_VAR_MIN, LOG_VAR_MAX))

    @classmethod
    def standard(cls, latent_dim: int) -> "LatentGaussian":
        return cls(Tensor(np.zeros(latent_dim)), Tensor(np.zeros(latent_dim)))

    @property
    def latent_dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var.data)

    def log_prob(self, z: np.ndarray) -> np.ndarray:
        """Density of samples ``z`` (numpy only, used by Monte-Carlo checks)."""
        var = np.exp(self.log_var.data)
        return -0.5 * np.sum((z - self.mean.data) ** 2 / var + self.log_var.data + LOG_2PI, axis=-1)


def kl_diag_gaussian(p: LatentGaussian, q: LatentGaussian) -> Tensor:
    """KL(p || q) summed over the latent axis; one value per batch row."""
    if p.latent_dim != q.latent_dim:
        raise DimensionError(f"latent dims differ: {p.latent_dim} vs {q.latent_dim}")
    for t in (p.mean, p.log_var, q.mean, q.log_var):
        if not np.isfinite(t.data).all():
            raise NumericError("non-finite Gaussian parameters")
    diff = p.mean - q.mean
    inv_var_q = T.exp(-q.log_var)
    terms = 0.5 * (q.log_var - p.log_var) + 0.5 * (T.exp(p.log_var) + T.square(diff)) * inv_var_q - 0.5
    return T.tsum(terms, axis=-1)


def reparameterize(dist: LatentGaussian, noise: np.ndarray) -> Tensor:
    noise = np.asarray(noise, dtype=T.DTYPE)
    if noise.shape[-1] != dist.latent_dim:
        raise DimensionError(f"noise dim {noise.shape[-1]} != latent dim {dist.latent_dim}")
    return dist.mean + T.exp(0.5 * dist.log_var) * noise


def gaussian_log_likelihood(x: np.ndarray, mean: Tensor) -> Tensor:
    """Unit-variance Gaussian log density of ``x``, summed over the last axis."""
    d = mean.shape[-1]
    return -0.5 * T.tsum(T.square(mean - x), axis=-1) - 0.5 * d * LOG_2PI


@dataclass(frozen=True)
class CategoricalDist:
    logits: Tensor

    def __post_init__(self):
        data = self.logits.data
        if np.isnan(data).any() or np.isposinf(data).any():
            raise NumericError("non-finite logits")
        if (np.isneginf(data).all(axis=-1)).any():
            raise NumericError("degenerate categorical: every logit is -inf")

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def log_probs(self) -> Tensor:
        return T.log_softmax(self.logits, axis=-1)

    def probs(self) -> np.ndarray:
        z = self.logits.data - self.logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def log_prob(self, actions: np.ndarray) -> Tensor:
        actions = np.asarray(actions, dtype=np.int64)[..., None]
        return T.take_along(self.log_probs(), actions, axis=-1)[..., 0]

    def entropy(self) -> Tensor:
        logp = self.log_probs()
        return -T.tsum(T.exp(logp) * logp, axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray | int:
        p = self.probs()
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(p.shape[:-1] + (1,)) * cdf[..., -1:]
        idx = np.minimum((cdf <= u).sum(axis=-1), self.n - 1)
        return int(idx) if idx.ndim == 0 else idx


def categorical_sample(dist: CategoricalDist, rng: np.random.Generator):
    return dist.sample(rng)


def categorical_entropy(dist: CategoricalDist) -> Tensor:
    return dist.entropy()


def greedy(values: np.ndarray) -> np.ndarray | int:
    """Argmax over the last axis; ties resolve to the lowest index."""
    idx = np.argmax(values, axis=-1)
    return int(idx) if np.ndim(idx) == 0 else idx
