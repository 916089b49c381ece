"""Variance-preserving schedule, per-branch noise predictors and the
deterministic reverse sampler that turns a start draw into a source."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

EPS_NUM = 1e-8


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray  # length L + 1, alpha_bar[0] == 1

    @property
    def L(self):
        return len(self.beta)


def default_beta_range(L):
    """DDPM endpoints (1e-4, 0.02) rescaled for a chain of ``L`` steps."""
    scale = 1000.0 / L
    return 1e-4 * scale, min(0.02 * scale, 0.2)


def make_schedule(L, beta_min=None, beta_max=None):
    """Linearly spaced betas from ``beta_min`` to ``beta_max`` over ``L`` steps."""
    if int(L) != L or L < 1:
        raise ValueError(f"L must be a positive integer, got {L}")
    L = int(L)
    lo, hi = default_beta_range(L)
    beta_min = lo if beta_min is None else beta_min
    beta_max = hi if beta_max is None else beta_max
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    beta = np.linspace(beta_min, beta_max, L)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return DiffusionSchedule(beta, alpha, alpha_bar)


class EpsilonNet:
    """Noise predictor for one branch: ``(x in R^T, step fraction) -> R^T``.

    Two tanh hidden layers over the trajectory concatenated with the step
    fraction.  The first layer's weight is stored split into the trajectory
    block and the step-fraction row, which is the same affine map as
    multiplying the concatenated input.  The output layer starts at zero.
    """

    def __init__(self, T, hidden=128, rng=None, name="eps"):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = T + 1
        self.T = T
        self.hidden = hidden
        self.W1 = ad.Parameter(rng.standard_normal((T, hidden)) / np.sqrt(fan_in), f"{name}.W1")
        self.w1_step = ad.Parameter(rng.standard_normal(hidden) / np.sqrt(fan_in), f"{name}.w1_step")
        self.b1 = ad.Parameter(np.zeros(hidden), f"{name}.b1")
        self.W2 = ad.Parameter(rng.standard_normal((hidden, hidden)) / np.sqrt(hidden), f"{name}.W2")
        self.b2 = ad.Parameter(np.zeros(hidden), f"{name}.b2")
        self.W3 = ad.Parameter(np.zeros((hidden, T)), f"{name}.W3")
        self.b3 = ad.Parameter(np.zeros(T), f"{name}.b3")

    def parameters(self):
        return [self.W1, self.w1_step, self.b1, self.W2, self.b2, self.W3, self.b3]

    def __call__(self, x, step_frac):
        if not 0.0 <= step_frac <= 1.0:
            raise ValueError(f"step fraction must lie in [0, 1], got {step_frac}")
        h = ad.tanh(ad.matmul(x, self.W1) + step_frac * self.w1_step + self.b1)
        h = ad.tanh(ad.matmul(h, self.W2) + self.b2)
        return ad.matmul(h, self.W3) + self.b3


def eps_forward(net, x, step_frac):
    return net(x, step_frac)


def reverse_sample(net, z, sched, record_path=False, eps_num=EPS_NUM):
    """Deterministic reverse chain ``x_L = z -> x_0``.

    Each step forms the clean estimate from one network call and re-noises it
    to the previous level with the same prediction.  Returns ``(s, path)``
    where ``path`` lists the L + 1 state values from ``x_L`` to ``x_0`` when
    ``record_path`` is set, else ``None``.
    """
    ab = sched.alpha_bar
    L = sched.L
    x = ad.as_node(z)
    path = [x.value.copy()] if record_path else None
    for tau in range(L, 0, -1):
        e = net(x, tau / L)
        x0_hat = (x - np.sqrt(1.0 - ab[tau]) * e) * (1.0 / (np.sqrt(ab[tau]) + eps_num))
        x = np.sqrt(ab[tau - 1]) * x0_hat + np.sqrt(1.0 - ab[tau - 1]) * e
        if record_path:
            path.append(x.value.copy())
    return x, path


def forward_noise(s, tau, sched, rng, eta=None):
    """``x_tau = sqrt(abar) s + sqrt(1 - abar) eta``; ``eta`` is a constant draw."""
    if not 0 <= tau <= sched.L:
        raise ValueError(f"tau must lie in [0, {sched.L}], got {tau}")
    s = ad.as_node(s)
    if eta is None:
        eta = rng.standard_normal(s.shape)
    ab = sched.alpha_bar[tau]
    return np.sqrt(ab) * s + np.sqrt(1.0 - ab) * eta, eta
