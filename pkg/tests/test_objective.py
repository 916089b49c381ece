import numpy as np
import pytest

from stradiff import autodiff as ad
from stradiff.diffusion import make_schedule
from stradiff.errors import ShapeError
from stradiff.mixing import LinearMixing
from stradiff.objective import (TrainConfig, denoising_loss, fit, init_state, objective,
                                reconstruction_loss, standardize, train_step)


def toy_data(T=128, n=2, m=None, seed=0):
    t = np.linspace(0, 1, T)
    S = np.column_stack([np.sin(2 * np.pi * (k + 1) * t + k) for k in range(n)])
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m or n, n))
    return S, S @ A.T


def small_config(**kw):
    base = dict(n=2, hidden=16, L=5, epochs=3)
    base.update(kw)
    return TrainConfig(**base)


class _Oracle:
    """Stands in for an epsilon-net and returns preset outputs."""

    def __init__(self, out):
        self.out = out

    def __call__(self, x, frac):
        return ad.Node(self.out)


# reconstruction

def test_rec_zero_at_perfect_fit(rng):
    Y = rng.standard_normal((7, 3))
    assert float(reconstruction_loss(Y, Y).value) == 0.0


def test_rec_scalar_example():
    assert float(reconstruction_loss(np.array([[2.0]]), np.array([[0.0]]), 1.0).value) == 2.0


def test_rec_halves_when_nu_doubles(rng):
    Y, Yh = rng.standard_normal((9, 2)), rng.standard_normal((9, 2))
    a = float(reconstruction_loss(Y, Yh, 1.3).value)
    b = float(reconstruction_loss(Y, Yh, 2.6).value)
    assert abs(a - 2 * b) < 1e-14


def test_rec_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        reconstruction_loss(np.zeros((4, 2)), np.zeros((4, 3)))


# denoising

def test_denoising_zero_with_oracle(rng):
    T, n = 6, 3
    sched = make_schedule(4)
    etas = [rng.standard_normal(T) for _ in range(n)]
    nets = [_Oracle(e) for e in etas]
    val = denoising_loss(rng.standard_normal((T, n)), nets, sched, rng, tau=2, etas=etas)
    assert float(val.value) == 0.0


def test_denoising_zero_net_expectation_is_one(rng):
    T, n, draws = 16, 2, 4000
    sched = make_schedule(5)
    nets = [_Oracle(np.zeros(T)) for _ in range(n)]
    S = rng.standard_normal((T, n))
    vals = np.array([float(denoising_loss(S, nets, sched, rng).value) for _ in range(draws)])
    # each draw is chi^2_{nT} / (nT): variance 2 / (nT)
    se = np.sqrt(2.0 / (n * T) / draws)
    assert abs(vals.mean() - 1.0) < 4 * se
    assert np.all(vals >= 0)


def test_denoising_zero_net_exact_value(rng):
    T, n = 5, 2
    sched = make_schedule(3)
    etas = [rng.standard_normal(T) for _ in range(n)]
    nets = [_Oracle(np.zeros(T)) for _ in range(n)]
    val = float(denoising_loss(np.zeros((T, n)), nets, sched, rng, tau=1, etas=etas).value)
    expected = np.mean([e @ e / T for e in etas])
    assert abs(val - expected) < 1e-14


# training step

def test_breakdown_total_is_weighted_sum():
    S, Y = toy_data(T=32)
    cfg = small_config(lambda_prior=0.3, lambda_diff=0.7, lambda_kl=0.05, epochs=5)
    _, report = fit(Y, cfg)
    for b in report.losses:
        recomputed = b.rec + 0.3 * b.prior + 0.7 * b.diff + 0.05 * b.kl
        assert abs(b.total - recomputed) < 1e-10


def test_zero_weights_leave_only_rec():
    _, Y = toy_data(T=32)
    cfg = small_config(lambda_prior=0.0, lambda_diff=0.0, lambda_kl=0.0, epochs=4)
    _, report = fit(Y, cfg)
    for b in report.losses:
        assert b.total == b.rec


def test_every_parameter_group_gets_gradient():
    _, Y = toy_data(T=24)
    cfg = small_config(lambda_prior=0.1, lambda_diff=1.0, lambda_kl=0.01)
    Y_norm, mean, std = standardize(Y)
    state = init_state(24, 2, cfg, mean, std)
    # move off the KL minimizer so the start parameters see a nonzero KL pull as well
    for d in state.starts:
        d.mu.value = d.mu.value + 0.1
    total, _, _ = objective(state, Y_norm, state.rng)
    params = state.parameters()
    grads = ad.backward(total, params)
    groups = {}
    for p in params:
        key = p.name.rsplit(".", 1)[0] if "eps" in p.name else p.name
        groups[key] = groups.get(key, 0.0) + float(np.max(np.abs(grads[p])))
    for k in range(2):
        for part in ("start.mu", "start.log_sigma", "gamma", "eps"):
            assert groups[f"branch{k}.{part}"] > 0, f"branch{k}.{part}"
    assert groups["mixing.A"] > 0


def test_fit_is_deterministic():
    _, Y = toy_data(T=32)
    cfg = small_config(epochs=6)
    s1, r1 = fit(Y, cfg)
    s2, r2 = fit(Y, cfg)
    assert r1.losses == r2.losses
    for name, p in s1.named_tensors().items():
        assert np.array_equal(p.value, s2.named_tensors()[name].value)


def test_zero_epochs_returns_fresh_state():
    _, Y = toy_data(T=16)
    state, report = fit(Y, small_config(epochs=0))
    assert state.epoch == 0 and report.losses == [] and report.correlations == []


def test_linear_columns_unit_after_step():
    _, Y = toy_data(T=16, m=3)
    state, _ = fit(Y, small_config(epochs=2))
    assert np.allclose(np.linalg.norm(state.mixing.A.value, axis=0), 1.0, rtol=0, atol=1e-12)


def test_constant_channel_guard():
    _, Y = toy_data(T=20, m=3)
    Y[:, 1] = 4.0
    Yn, mean, std = standardize(Y)
    assert std[1] == 1e-8 and np.all(Yn[:, 1] == 0)
    _, report = fit(Y, small_config(epochs=2))
    assert all(np.isfinite(b.total) for b in report.losses)


def test_nonfinite_data_rejected():
    _, Y = toy_data(T=10)
    Y[3, 0] = np.nan
    with pytest.raises(ValueError):
        fit(Y, small_config())


@pytest.mark.parametrize("kw", [dict(lambda_kl=-1.0), dict(nu_y=0.0), dict(epochs=-1),
                                dict(xi=0.0), dict(mixing_kind="convolutive")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_snapshot_epochs_resolve_final():
    cfg = TrainConfig(epochs=50, snapshot_epochs=(0, 3000, -1))
    assert cfg.resolved_snapshots() == [0, 50]


def test_snapshots_do_not_perturb_training():
    _, Y = toy_data(T=16)
    _, r1 = fit(Y, small_config(epochs=3))
    _, r2 = fit(Y, small_config(epochs=3, snapshot_epochs=(0, 1, -1)))
    assert r1.losses == r2.losses
    assert sorted(r2.snapshots) == [0, 1, 3]
    assert all(p.shape == (6, 16) for p in r2.snapshots[0])


def test_rec_decreases_on_linear_toy():
    _, Y = toy_data(T=128)
    cfg = TrainConfig(n=2, epochs=200)
    _, report = fit(Y, cfg)
    assert report.losses[-1].rec < report.losses[0].rec


def test_reduces_to_autoencoding():
    """No regularizers, fixed identity mixing, m = n: plain reconstruction fit."""
    T = 64
    S, _ = toy_data(T=T)
    cfg = TrainConfig(n=2, epochs=2000, lambda_prior=0.0, lambda_diff=0.0, lambda_kl=0.0,
                      train_mixing=False, lr=1e-2, hidden=32, log_sigma_init=-5.0)
    Y_norm, mean, std = standardize(S)
    state = init_state(T, 2, cfg, mean, std, mixing=LinearMixing(2, 2, A=np.eye(2)))
    _, report = fit(S, cfg, state=state)
    assert report.losses[-1].rec < 1e-3
    assert np.array_equal(state.mixing.A.value, np.eye(2))


def test_resume_matches_uninterrupted_run():
    _, Y = toy_data(T=16)
    full, r_full = fit(Y, small_config(epochs=6))
    half, r_a = fit(Y, small_config(epochs=3))
    half.config = small_config(epochs=6)
    resumed, r_b = fit(Y, half.config, state=half)
    assert r_a.losses + r_b.losses == r_full.losses


def test_train_step_advances_epoch():
    _, Y = toy_data(T=12)
    Y_norm, mean, std = standardize(Y)
    state = init_state(12, 2, small_config(), mean, std)
    b = train_step(state, Y_norm)
    assert b.epoch == 0 and state.epoch == 1 and state.last_sources.shape == (12, 2)
