"""Observation maps from the source matrix ``S`` (T x n) to mixtures (T x m)."""

import numpy as np

from . import autodiff as ad
from .errors import DegenerateMixing, ShapeError


class LinearMixing:
    """``Y_hat = S A^T`` with a trainable ``m x n`` matrix ``A``."""

    kind = "linear"

    def __init__(self, m, n, rng=None, A=None):
        drawn = A is None
        if drawn:
            rng = rng if rng is not None else np.random.default_rng(0)
            A = rng.standard_normal((m, n))
        self.A = ad.Parameter(A, "mixing.A")
        if drawn:
            normalize_columns(self)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    def parameters(self):
        return [self.A]

    def __call__(self, S):
        S = ad.as_node(S)
        if S.ndim != 2 or S.shape[1] != self.n:
            raise ShapeError(f"mixing expects T x {self.n} sources, got {S.shape}")
        return ad.matmul(S, ad.transpose(self.A))


class NonlinearMixing:
    """Row-wise MLP ``n -> hidden -> hidden -> m`` with tanh activations.

    Weights start small so the initial map sits in the near-linear part of
    tanh.
    """

    kind = "nonlinear"

    def __init__(self, m, n, hidden=64, rng=None, init_scale=0.5):
        rng = rng if rng is not None else np.random.default_rng(0)
        self._m, self._n = m, n
        self.W1 = ad.Parameter(init_scale * rng.standard_normal((n, hidden)) / np.sqrt(n), "mixing.W1")
        self.b1 = ad.Parameter(np.zeros(hidden), "mixing.b1")
        self.W2 = ad.Parameter(init_scale * rng.standard_normal((hidden, hidden)) / np.sqrt(hidden), "mixing.W2")
        self.b2 = ad.Parameter(np.zeros(hidden), "mixing.b2")
        self.W3 = ad.Parameter(rng.standard_normal((hidden, m)) / np.sqrt(hidden), "mixing.W3")
        self.b3 = ad.Parameter(np.zeros(m), "mixing.b3")

    @property
    def m(self):
        return self._m

    @property
    def n(self):
        return self._n

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def __call__(self, S):
        S = ad.as_node(S)
        if S.ndim != 2 or S.shape[1] != self.n:
            raise ShapeError(f"mixing expects T x {self.n} sources, got {S.shape}")
        h = ad.tanh(ad.matmul(S, self.W1) + self.b1)
        h = ad.tanh(ad.matmul(h, self.W2) + self.b2)
        return ad.matmul(h, self.W3) + self.b3


def mix(mixing, S):
    return mixing(S)


def normalize_columns(mixing):
    """Rescale each column of a linear map to unit Euclidean norm, in place.

    Runs outside the graph, after the optimizer step.
    """
    A = mixing.A.value
    norms = np.linalg.norm(A, axis=0)
    if np.any(~(norms > 0)):
        raise DegenerateMixing(f"mixing column(s) {np.flatnonzero(~(norms > 0)).tolist()} collapsed")
    mixing.A.value = A / norms
