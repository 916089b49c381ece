"""Monte Carlo source estimates and permutation/sign-matched evaluation."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .diffusion import reverse_sample
from .errors import ShapeError
from .latent import sample_start

BAND_Z = 1.96


@dataclass
class SourceEstimate:
    mean: np.ndarray
    std: np.ndarray
    R: int

    @property
    def band_lo(self):
        return self.mean - BAND_Z * self.std

    @property
    def band_hi(self):
        return self.mean + BAND_Z * self.std


@dataclass
class MatchResult:
    """Best signed assignment of estimated columns to true sources.

    ``permutation[j]`` is the estimated column matched to true source ``j``;
    ``signs[j]`` and ``correlations[j]`` refer to that pair.
    """

    permutation: tuple
    signs: np.ndarray
    correlations: np.ndarray
    mean_corr: float
    degenerate: list = field(default_factory=list)

    def aligned(self, est):
        """Reorder and sign-flip ``est`` columns into the truth's order."""
        est = np.asarray(est)
        return est[:, list(self.permutation)] * self.signs


def draw_sources(state, R, rng, batch_size=None):
    """``R`` draws of the source matrix, shape ``(R, T, n)``."""
    batch_size = batch_size or R
    out = np.empty((R, state.T, state.n))
    with ad.no_grad():
        for start in range(0, R, batch_size):
            size = min(batch_size, R - start)
            for k, (dist, net) in enumerate(zip(state.starts, state.nets)):
                z, _ = sample_start(dist, rng, size=size)
                s, _ = reverse_sample(net, z, state.schedule, eps_num=state.config.eps_num)
                out[start:start + size, :, k] = s.value
    return out


def mc_estimate(state, R=100, rng=None, batch_size=None):
    """Entrywise mean and (R - 1)-denominator std of ``R`` generator draws."""
    if R < 2:
        raise ValueError(f"need at least two draws, got R={R}")
    rng = rng if rng is not None else np.random.default_rng(state.config.seed)
    draws = draw_sources(state, R, rng, batch_size=batch_size or min(R, 200))
    mean = draws.mean(axis=0)
    std = draws.std(axis=0, ddof=1)
    return SourceEstimate(mean=mean, std=std, R=R)


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0)), False


def correlation_matrix(est, truth):
    """``C[i, j]`` = Pearson correlation of estimated column i with true column j."""
    n = est.shape[1]
    C = np.zeros((n, truth.shape[1]))
    degenerate = set()
    for i in range(n):
        for j in range(truth.shape[1]):
            C[i, j], bad = _pearson(est[:, i], truth[:, j])
            if bad:
                degenerate.add((i, j))
    return C, sorted(degenerate)


def match_sources(est, truth):
    """Exhaustive search over permutations for the best mean |correlation|.

    Ties go to the lexicographically smallest permutation.  Zero-variance
    columns correlate as 0 and are listed in ``degenerate``.
    """
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape or est.ndim != 2:
        raise ShapeError(f"match_sources: shapes {est.shape} and {truth.shape}")
    n = est.shape[1]
    if n > 8:
        raise ValueError(f"exhaustive matching is limited to 8 sources, got {n}")
    C, degenerate = correlation_matrix(est, truth)
    absC = np.abs(C)
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(n)):
        score = np.mean(absC[list(perm), range(n)])
        if score > best_score:
            best, best_score = perm, score
    picked = C[list(best), range(n)]
    signs = np.where(picked < 0, -1.0, 1.0)
    return MatchResult(permutation=best, signs=signs, correlations=np.abs(picked),
                       mean_corr=float(best_score), degenerate=degenerate)


def plug_in_reconstruction(state, est):
    """Mix the mean source estimate and undo the observation standardization."""
    mean = est.mean if isinstance(est, SourceEstimate) else np.asarray(est)
    with ad.no_grad():
        Yhat = state.mixing(mean).value
    return Yhat * state.y_std + state.y_mean
