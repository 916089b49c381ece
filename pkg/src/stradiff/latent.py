"""Trainable diagonal-Gaussian start distributions for the source branches."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_SIGMA_MIN = -10.0
LOG_SIGMA_MAX = 5.0


@dataclass
class StartDistribution:
    mu: ad.Parameter
    log_sigma: ad.Parameter

    @classmethod
    def standard(cls, T, name="start", log_sigma=0.0):
        return cls(ad.Parameter(np.zeros(T), f"{name}.mu"),
                   ad.Parameter(np.full(T, float(log_sigma)), f"{name}.log_sigma"))

    @property
    def T(self):
        return self.mu.shape[0]

    def clamped_log_sigma(self):
        return ad.clip(self.log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)

    @property
    def sigma(self):
        return np.exp(np.clip(self.log_sigma.value, LOG_SIGMA_MIN, LOG_SIGMA_MAX))


def sample_start(dist, rng, size=None, eps=None):
    """Reparameterized draw ``z = mu + sigma * eps``.

    Returns ``(z, eps)``.  With ``size`` given, ``z`` has shape
    ``(size, T)``, one draw per row.
    """
    shape = (dist.T,) if size is None else (size, dist.T)
    if eps is None:
        eps = rng.standard_normal(shape)
    z = dist.mu + ad.exp(dist.clamped_log_sigma()) * eps
    return z, eps


def kl_penalty(dists):
    """Averaged KL from each start distribution to N(0, I)."""
    n = len(dists)
    T = dists[0].T
    total = 0.0
    for d in dists:
        ls = d.clamped_log_sigma()
        total = total + ad.sum(ad.square(d.mu) + ad.exp(2.0 * ls) - 1.0 - 2.0 * ls)
    return total * (1.0 / (2.0 * T * n))
