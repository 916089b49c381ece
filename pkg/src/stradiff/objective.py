"""The four-term training objective and the end-to-end training loop."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .diffusion import EpsilonNet, forward_noise, make_schedule, reverse_sample
from .errors import NumericalFault, ShapeError
from .estimate import match_sources
from .gp import GpHyper, build_kernel, gamma_for, gp_penalty, lengthscale, sq_dists, time_grid
from .latent import StartDistribution, kl_penalty, sample_start
from .mixing import LinearMixing, NonlinearMixing, normalize_columns
from .optim import Adam

SCALE_FLOOR = 1e-8


@dataclass
class TrainConfig:
    lambda_prior: float = 0.1
    lambda_diff: float = 1.0
    lambda_kl: float = 0.01
    nu_y: float = 1.0
    epochs: int = 10000
    L: int = 20
    beta_min: float = None
    beta_max: float = None
    eps_num: float = 1e-8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    n: int = 3
    mixing_kind: str = "linear"
    hidden: int = 128
    mix_hidden: int = 64
    train_mixing: bool = True
    sigma_f2: float = 1.0
    xi: float = 1e-4
    ell_init: float = 0.1
    gamma_jitter: float = 0.01
    log_sigma_init: float = 0.0
    snapshot_epochs: tuple = ()

    def __post_init__(self):
        if min(self.lambda_prior, self.lambda_diff, self.lambda_kl) < 0:
            raise ValueError("loss weights must be nonnegative")
        if not self.nu_y > 0:
            raise ValueError(f"nu_y must be positive, got {self.nu_y}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be nonnegative, got {self.epochs}")
        if not (self.xi > 0 and self.sigma_f2 > 0):
            raise ValueError("xi and sigma_f2 must be positive for training")
        if self.mixing_kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown mixing kind {self.mixing_kind!r}")

    @property
    def hyper(self):
        return GpHyper(self.sigma_f2, self.xi)

    def resolved_snapshots(self):
        """Snapshot epochs with ``-1`` standing for the final epoch."""
        return sorted({self.epochs if e < 0 else int(e) for e in self.snapshot_epochs
                       if (self.epochs if e < 0 else e) <= self.epochs})


@dataclass
class LossBreakdown:
    rec: float
    prior: float
    diff: float
    kl: float
    total: float
    epoch: int


@dataclass
class ModelState:
    """Every trainable quantity plus the bookkeeping needed to resume."""

    config: TrainConfig
    t: np.ndarray
    schedule: object
    starts: list
    nets: list
    gammas: list
    mixing: object
    optimizer: Adam
    rng: np.random.Generator
    y_mean: np.ndarray
    y_std: np.ndarray
    epoch: int = 0
    last_sources: np.ndarray = field(default=None, repr=False)
    _d2: np.ndarray = field(default=None, repr=False)

    @property
    def T(self):
        return len(self.t)

    @property
    def n(self):
        return len(self.starts)

    @property
    def m(self):
        return len(self.y_mean)

    @property
    def d2(self):
        if self._d2 is None:
            self._d2 = sq_dists(self.t)
        return self._d2

    def lengthscales(self):
        return np.array([lengthscale(float(g.value)) for g in self.gammas])

    def parameters(self):
        params = []
        for dist, net, gamma in zip(self.starts, self.nets, self.gammas):
            params += [dist.mu, dist.log_sigma, gamma] + net.parameters()
        if self.config.train_mixing:
            params += self.mixing.parameters()
        return params

    def named_tensors(self):
        params = list(self.parameters())
        if not self.config.train_mixing:
            params += self.mixing.parameters()
        return {p.name: p for p in params}


def init_state(T, m, config, y_mean=None, y_std=None, mixing=None):
    """Fresh model for ``T`` time points and ``m`` observed channels."""
    init_seq, train_seq = np.random.SeedSequence(config.seed).spawn(2)
    init_rng = np.random.default_rng(init_seq)
    n = config.n
    starts = [StartDistribution.standard(T, f"branch{k}.start", config.log_sigma_init) for k in range(n)]
    nets = [EpsilonNet(T, config.hidden, init_rng, f"branch{k}.eps") for k in range(n)]
    base = gamma_for(config.ell_init)
    gammas = [ad.Parameter(base + config.gamma_jitter * k, f"branch{k}.gamma") for k in range(n)]
    if mixing is None:
        if config.mixing_kind == "linear":
            mixing = LinearMixing(m, n, init_rng)
        else:
            mixing = NonlinearMixing(m, n, config.mix_hidden, init_rng)
    return ModelState(
        config=config,
        t=time_grid(T),
        schedule=make_schedule(config.L, config.beta_min, config.beta_max),
        starts=starts,
        nets=nets,
        gammas=gammas,
        mixing=mixing,
        optimizer=Adam(config.lr, config.beta1, config.beta2, config.adam_eps),
        rng=np.random.default_rng(train_seq),
        y_mean=np.zeros(m) if y_mean is None else np.asarray(y_mean, dtype=np.float64),
        y_std=np.ones(m) if y_std is None else np.asarray(y_std, dtype=np.float64),
    )


def standardize(Y):
    """Per-channel zero mean / unit variance; constant channels keep scale 1e-8."""
    Y = np.asarray(Y, dtype=np.float64)
    if not np.all(np.isfinite(Y)):
        raise ValueError("observations contain non-finite values")
    mean = Y.mean(axis=0)
    std = np.maximum(Y.std(axis=0), SCALE_FLOOR)
    return (Y - mean) / std, mean, std


def reconstruction_loss(Y_norm, Yhat, nu_y=1.0):
    Yhat = ad.as_node(Yhat)
    Y_norm = np.asarray(Y_norm, dtype=np.float64)
    if Y_norm.shape != Yhat.shape:
        raise ShapeError(f"reconstruction: {Y_norm.shape} vs {Yhat.shape}")
    T, m = Y_norm.shape
    return ad.sum_squares(Y_norm - Yhat) * (1.0 / (2.0 * nu_y * T * m))


def denoising_loss(S, nets, sched, rng, tau=None, etas=None):
    """Epsilon-prediction loss at one shared step ``tau`` with fresh noise per branch."""
    S = ad.as_node(S)
    T, n = S.shape
    if tau is None:
        tau = int(rng.integers(1, sched.L + 1))
    total = 0.0
    for k, net in enumerate(nets):
        eta = None if etas is None else etas[k]
        x_tau, eta = forward_noise(ad.column(S, k), tau, sched, rng, eta=eta)
        total = total + ad.sum_squares(net(x_tau, tau / sched.L) - eta) * (1.0 / T)
    return total * (1.0 / n)


def generate_sources(state, rng):
    """One reparameterized pass of every branch; returns the T x n source node."""
    cols = []
    for dist, net in zip(state.starts, state.nets):
        z, _ = sample_start(dist, rng)
        s, _ = reverse_sample(net, z, state.schedule, eps_num=state.config.eps_num)
        cols.append(s)
    return ad.stack(cols, axis=1)


def objective(state, Y_norm, rng):
    """Single-sample objective; returns ``(total node, parts dict, S node)``."""
    cfg = state.config
    S = generate_sources(state, rng)
    rec = reconstruction_loss(Y_norm, state.mixing(S), cfg.nu_y)
    kernels = [build_kernel(state.t, g, cfg.hyper, state.d2) for g in state.gammas]
    prior = gp_penalty(S, kernels)
    diff = denoising_loss(S, state.nets, state.schedule, rng)
    kl = kl_penalty(state.starts)
    total = rec + cfg.lambda_prior * prior + cfg.lambda_diff * diff + cfg.lambda_kl * kl
    return total, {"rec": rec, "prior": prior, "diff": diff, "kl": kl}, S


def train_step(state, Y_norm):
    """One pass of the training loop: sample, evaluate, differentiate, update."""
    total, parts, S = objective(state, Y_norm, state.rng)
    params = state.parameters()
    grads = ad.backward(total, params)
    try:
        state.optimizer.step(params, grads)
    except NumericalFault as exc:
        raise NumericalFault(f"epoch {state.epoch}: {exc}", parameter=exc.parameter,
                             epoch=state.epoch) from exc
    if state.mixing.kind == "linear" and state.config.train_mixing:
        normalize_columns(state.mixing)
    breakdown = LossBreakdown(
        rec=float(parts["rec"].value), prior=float(parts["prior"].value),
        diff=float(parts["diff"].value), kl=float(parts["kl"].value),
        total=float(total.value), epoch=state.epoch)
    state.epoch += 1
    state.last_sources = S.value
    return breakdown


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    correlations: list = field(default_factory=list)
    lengthscales: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def snapshot_paths(state, epoch):
    """Reverse-chain states of each branch from a start draw tied to ``epoch``.

    Uses its own generator so taking snapshots never perturbs training.
    """
    rng = np.random.default_rng([state.config.seed, 0x5EED, epoch])
    paths = []
    with ad.no_grad():
        for dist, net in zip(state.starts, state.nets):
            z, _ = sample_start(dist, rng)
            _, path = reverse_sample(net, z, state.schedule, record_path=True,
                                     eps_num=state.config.eps_num)
            paths.append(np.array(path))
    return paths


def fit(Y, config, truth=None, state=None, callback=None):
    """Standardize ``Y`` and train for ``config.epochs`` total epochs.

    A ``state`` carried over from a checkpoint resumes at its epoch.
    ``callback(state, breakdown)`` runs after every step.
    """
    Y_norm, mean, std = standardize(Y)
    if state is None:
        state = init_state(Y_norm.shape[0], Y_norm.shape[1], config, mean, std)
    else:
        Y_norm = (np.asarray(Y, dtype=np.float64) - state.y_mean) / state.y_std
    report = TrainReport()
    snaps = set(config.resolved_snapshots())
    while True:
        if state.epoch in snaps:
            report.snapshots[state.epoch] = snapshot_paths(state, state.epoch)
        if state.epoch >= config.epochs:
            break
        ells = state.lengthscales()
        breakdown = train_step(state, Y_norm)
        report.losses.append(breakdown)
        report.lengthscales.append(ells)
        if truth is not None:
            report.correlations.append(match_sources(state.last_sources, truth).correlations)
        if callback is not None:
            callback(state, breakdown)
    return state, report
