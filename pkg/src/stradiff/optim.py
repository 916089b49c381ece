"""Adam optimizer acting on :class:`~stradiff.autodiff.Parameter` leaves."""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFault


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")

    def step(self, params, grads):
        """Apply one bias-corrected Adam update in place.

        Every gradient is checked before any parameter moves, so a
        non-finite gradient leaves the whole state untouched.
        """
        for p in params:
            if p not in grads:
                raise ValueError(f"missing gradient for parameter {p.name!r}")
            if not np.all(np.isfinite(grads[p])):
                raise NumericalFault(f"non-finite gradient for parameter {p.name!r}", parameter=p.name)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in params:
            g = grads[p]
            p.m *= self.beta1
            p.m += (1.0 - self.beta1) * g
            p.v *= self.beta2
            p.v += (1.0 - self.beta2) * (g * g)
            p.value = p.value - (self.lr / bc1) * p.m / (np.sqrt(p.v / bc2) + self.eps)
            p.cache.clear()


def optimizer_step(params, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
    """Functional front end: one Adam step, returning the (advanced) optimizer."""
    opt = state if state is not None else Adam(lr, beta1, beta2, eps)
    opt.step(params, grads)
    return opt
