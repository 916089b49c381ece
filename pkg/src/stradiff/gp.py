"""Squared-exponential Gaussian-process prior over source trajectories.

Each source ``k`` has its own length-scale ``ell_k = exp(gamma_k) + 1e-6``
on a time grid normalized to ``[0, 1]``.  The penalty is the Gaussian
negative log-density of the trajectories, averaged over ``T * n`` entries.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import autodiff as ad
from .errors import ShapeError

ELL_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


def time_grid(T):
    """Normalized grid ``t_1 = 0 < ... < t_T = 1`` (``[0.]`` for ``T = 1``)."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    return np.linspace(0.0, 1.0, T) if T > 1 else np.zeros(1)


def lengthscale(gamma):
    """Map the unconstrained parameter to a positive length-scale."""
    if isinstance(gamma, ad.Node):
        return ad.exp(gamma) + ELL_FLOOR
    return np.exp(gamma) + ELL_FLOOR


def gamma_for(ell):
    return float(np.log(ell - ELL_FLOOR))


@dataclass
class GpHyper:
    sigma_f2: float = 1.0
    xi: float = 1e-4

    def __post_init__(self):
        # xi = 0 is allowed for direct kernel evaluation; training requires xi > 0
        if not (self.sigma_f2 > 0 and self.xi >= 0):
            raise ValueError("sigma_f2 must be positive and xi nonnegative")


@dataclass
class GpKernel:
    """Covariance of one source, as a graph node plus cached factorization."""

    K: ad.Node
    ell: ad.Node
    t: np.ndarray
    hyper: GpHyper

    @property
    def chol(self):
        return ad._cholesky_factor(self.K)

    @property
    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def sq_dists(t):
    t = np.asarray(t, dtype=np.float64)
    return (t[:, None] - t[None, :]) ** 2


def build_kernel(t, gamma, hyper=None, d2=None):
    """``K_ij = sigma_f2 * exp(-(t_i - t_j)^2 / (2 ell^2)) + xi * delta_ij``.

    ``gamma`` may be a float or a graph node; in the latter case the kernel
    is differentiable with respect to it.  ``d2`` lets callers reuse the
    squared-distance matrix across sources and steps.
    """
    hyper = hyper or GpHyper()
    t = np.asarray(t, dtype=np.float64)
    if d2 is None:
        d2 = sq_dists(t)
    ell = lengthscale(ad.as_node(gamma))
    inv_two_ell2 = 0.5 / ad.square(ell)
    K = hyper.sigma_f2 * ad.exp(ad.mul(-d2, inv_two_ell2)) + hyper.xi * np.eye(len(t))
    kernel = GpKernel(K=K, ell=ell, t=t, hyper=hyper)
    kernel.chol  # factor now so a bad matrix fails at construction
    return kernel


def gp_penalty(S, kernels):
    """Normalized GP negative log-density of the source matrix ``S`` (T x n)."""
    S = ad.as_node(S)
    if S.ndim != 2:
        raise ShapeError(f"gp_penalty expects a T x n matrix, got shape {S.shape}")
    T, n = S.shape
    if len(kernels) != n:
        raise ShapeError(f"{n} sources but {len(kernels)} kernels")
    total = 0.0
    for k, kern in enumerate(kernels):
        if kern.K.shape != (T, T):
            raise ShapeError(f"kernel {k} has shape {kern.K.shape}, sources have T={T}")
        total = total + ad.logdet(kern.K) + ad.inv_quad(kern.K, ad.column(S, k))
    return (T * n * LOG_2PI + total) * (1.0 / (2.0 * T * n))


def dK_dell(t, ell, sigma_f2=1.0):
    d2 = sq_dists(t)
    return sigma_f2 * np.exp(-d2 / (2.0 * ell**2)) * d2 / ell**3


def gp_grad_closed_form(S, kernels):
    """Exact gradients of the unnormalized per-source GP energy.

    Returns ``(grad_s, grad_ell)``: ``grad_s[:, k] = K_k^{-1} s_k`` and
    ``grad_ell[k] = tr(K^-1 dK)/2 - s^T K^-1 dK K^-1 s / 2``.  The caller
    applies the ``1/(T n)`` normalization and the ``d ell / d gamma`` factor.
    """
    S = np.asarray(S, dtype=np.float64)
    grad_s = np.empty_like(S)
    grad_ell = np.empty(S.shape[1])
    for k, kern in enumerate(kernels):
        K = kern.K.value
        ell = float(kern.ell.value)
        factor = sla.cho_factor(K, lower=True)
        alpha = sla.cho_solve(factor, S[:, k])
        K_inv = sla.cho_solve(factor, np.eye(K.shape[0]))
        dK = dK_dell(kern.t, ell, kern.hyper.sigma_f2)
        grad_s[:, k] = alpha
        grad_ell[k] = 0.5 * np.sum(K_inv * dK) - 0.5 * alpha @ dK @ alpha
    return grad_s, grad_ell
