"""Synthetic sources with distinct time scales and their linear or
post-nonlinear mixtures."""

from dataclasses import dataclass

import numpy as np

from .errors import GenerationFailure
from .gp import time_grid

MAX_COND = 20.0
MAX_REDRAWS = 100


@dataclass
class ExperimentSpec:
    T: int = 1000
    n: int = 3
    m: int = 3
    mixing_kind: str = "linear"
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError(f"T must be at least 2, got {self.T}")
        if self.mixing_kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown mixing kind {self.mixing_kind!r}")
        if self.m < self.n:
            raise ValueError(f"need m >= n for full column rank, got m={self.m}, n={self.n}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")


def raw_sources(t):
    """Unstandardized waveforms: slow sine, amplitude-modulated fast sine,
    smoothed square wave."""
    two_pi = 2.0 * np.pi
    return np.column_stack([
        np.sin(two_pi * 3.0 * t),
        np.sin(two_pi * 11.0 * t) * (1.0 + 0.5 * np.sin(two_pi * 1.5 * t)),
        np.tanh(5.0 * np.sin(two_pi * 5.0 * t)),
    ])


def make_sources(spec):
    """Ground-truth T x n sources, each column zero-mean and unit-variance."""
    if spec.n > 3:
        raise ValueError(f"only three synthetic source shapes exist, asked for {spec.n}")
    S = raw_sources(time_grid(spec.T))[:, :spec.n]
    S = S - S.mean(axis=0)
    return S / S.std(axis=0)


def random_mixing(m, n, rng, max_cond=MAX_COND):
    """Gaussian ``m x n`` matrix with unit-norm columns and bounded condition number."""
    for _ in range(MAX_REDRAWS):
        A = rng.standard_normal((m, n))
        A /= np.linalg.norm(A, axis=0)
        if np.linalg.cond(A) < max_cond:
            return A
    raise GenerationFailure(f"no draw with condition number < {max_cond} in {MAX_REDRAWS} tries")


@dataclass
class MixingTruth:
    kind: str
    A: np.ndarray
    B: np.ndarray = None


def make_mixture(S, spec, rng, A=None, B=None):
    """Observed mixtures ``Y`` and the mixing that produced them.

    Linear: ``Y = S A^T``.  Nonlinear: ``Y = tanh(S A^T) B^T``.  Gaussian
    noise with std ``spec.noise_std`` is added in both cases.
    """
    S = np.asarray(S, dtype=np.float64)
    T, n = S.shape
    if A is None:
        A = random_mixing(spec.m, n, rng)
    if spec.mixing_kind == "linear":
        Y = S @ A.T
    else:
        if B is None:
            B = random_mixing(spec.m, spec.m, rng)
        Y = np.tanh(S @ A.T) @ B.T
    if spec.noise_std > 0:
        Y = Y + spec.noise_std * rng.standard_normal(Y.shape)
    return Y, MixingTruth(spec.mixing_kind, A, B)


def generate(spec):
    """Sources, mixtures and mixing truth for one seeded experiment."""
    rng = np.random.default_rng(spec.seed)
    S = make_sources(spec)
    Y, truth = make_mixture(S, spec, rng)
    return S, Y, truth
