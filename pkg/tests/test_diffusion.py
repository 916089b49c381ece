import numpy as np
import pytest

from stradiff import autodiff as ad
from stradiff.diffusion import (EpsilonNet, default_beta_range, eps_forward, forward_noise,
                                make_schedule, reverse_sample)
from stradiff.selfcheck import sampler_suite, unbiasedness_suite

from conftest import central_diff, rel_err


def random_net(T, rng, hidden=8, scale=0.5):
    net = EpsilonNet(T, hidden=hidden, rng=rng)
    net.W3.value = scale * rng.standard_normal(net.W3.shape)
    net.b3.value = 0.1 * rng.standard_normal(T)
    return net


def test_schedule_single_step():
    s = make_schedule(1, 0.5, 0.5)
    assert np.array_equal(s.alpha_bar, [1.0, 0.5])


def test_schedule_two_steps():
    s = make_schedule(2, 0.1, 0.2)
    assert s.alpha_bar[2] == pytest.approx(0.72, abs=1e-15)


@pytest.mark.parametrize("L", [1, 5, 20, 100])
def test_default_schedule_invariants(L):
    s = make_schedule(L)
    assert s.L == L and s.alpha_bar[0] == 1.0
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.allclose(s.alpha, 1 - s.beta)


def test_default_beta_range_for_twenty_steps():
    lo, hi = default_beta_range(20)
    assert lo == pytest.approx(0.005) and hi == pytest.approx(0.2)


@pytest.mark.parametrize("lo,hi", [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0)])
def test_schedule_rejects_bad_range(lo, hi):
    with pytest.raises(ValueError):
        make_schedule(5, lo, hi)


def test_fresh_net_outputs_zero(rng):
    net = EpsilonNet(6, hidden=10, rng=rng)
    out = eps_forward(net, rng.standard_normal(6), 0.3)
    assert np.all(out.value == 0)


def test_net_is_deterministic(rng):
    net = random_net(5, rng)
    x = rng.standard_normal(5)
    assert np.array_equal(net(x, 0.4).value, net(x, 0.4).value)


def test_net_rejects_bad_step_fraction(rng):
    with pytest.raises(ValueError):
        EpsilonNet(3, hidden=4, rng=rng)(np.zeros(3), 1.5)


def test_net_input_jacobian_matches_finite_differences(rng):
    net = random_net(4, rng)
    x0 = rng.standard_normal(4)
    w = rng.standard_normal(4)
    x = ad.Parameter(x0, "x")
    (g,) = ad.grad(ad.sum(net(x, 0.25) * w), [x])
    fd = central_diff(lambda v: float(np.sum(net(v, 0.25).value * w)), x0)
    assert rel_err(g, fd) < 1e-5


def test_telescoping_identity():
    res = sampler_suite()
    assert res.passed, res.detail


def test_single_step_telescoping(rng):
    sched = make_schedule(1, 0.3, 0.3)
    z = rng.standard_normal(5)
    s, _ = reverse_sample(EpsilonNet(5, 4, rng), z, sched, eps_num=0.0)
    assert np.allclose(s.value, z / np.sqrt(0.7), rtol=1e-14)


def test_path_endpoints(rng):
    sched = make_schedule(6)
    net = random_net(7, rng)
    z = rng.standard_normal(7)
    s, path = reverse_sample(net, z, sched, record_path=True)
    assert len(path) == 7
    assert np.array_equal(path[0], z) and np.array_equal(path[-1], s.value)


@pytest.mark.parametrize("T", [1, 7, 1000])
def test_shape_preserved(T, rng):
    net = EpsilonNet(T, hidden=8, rng=rng)
    s, _ = reverse_sample(net, rng.standard_normal(T), make_schedule(4))
    assert s.shape == (T,)


def test_reverse_sample_deterministic(rng):
    net = random_net(5, rng)
    z = rng.standard_normal(5)
    a, _ = reverse_sample(net, z, make_schedule(5))
    b, _ = reverse_sample(net, z, make_schedule(5))
    assert np.array_equal(a.value, b.value)


def test_reverse_sample_gradients_match_finite_differences(rng):
    T, L = 4, 3
    sched = make_schedule(L)
    net = random_net(T, rng)
    z0 = rng.standard_normal(T)
    w = rng.standard_normal(T)
    z = ad.Parameter(z0, "z")
    s, _ = reverse_sample(net, z, sched)
    params = [z] + net.parameters()
    grads = ad.backward(ad.sum(s * w), params)

    def f_z(v):
        with ad.no_grad():
            return float(np.sum(reverse_sample(net, v, sched)[0].value * w))

    assert rel_err(grads[z], central_diff(f_z, z0)) < 1e-4
    for p in (net.W1, net.W2, net.W3, net.w1_step):
        base = p.value.copy()

        def f_p(v):
            p.value = v
            out = f_z(z0)
            p.value = base
            return out

        fd = central_diff(f_p, base)
        p.value = base
        assert rel_err(grads[p], fd) < 1e-4, p.name


def test_forward_noise_zero_eta(rng):
    sched = make_schedule(5)
    s = rng.standard_normal(6)
    x, _ = forward_noise(s, 3, sched, rng, eta=np.zeros(6))
    assert np.allclose(x.value, np.sqrt(sched.alpha_bar[3]) * s, rtol=0, atol=1e-15)


def test_forward_noise_step_zero_is_identity(rng):
    s = rng.standard_normal(6)
    x, _ = forward_noise(s, 0, make_schedule(5), rng)
    assert np.array_equal(x.value, s)


def test_forward_noise_variance():
    sched = make_schedule(5)
    rng = np.random.default_rng(11)
    s = np.linspace(-1, 1, 3)
    x, _ = forward_noise(np.broadcast_to(s, (100_000, 3)), 4, sched, rng)
    resid = x.value - np.sqrt(sched.alpha_bar[4]) * s
    assert np.allclose(resid.var(axis=0), 1 - sched.alpha_bar[4], rtol=0.05)


def test_forward_noise_rejects_bad_step(rng):
    with pytest.raises(ValueError):
        forward_noise(np.zeros(3), 6, make_schedule(5), rng)


def test_single_step_loss_is_unbiased():
    res = unbiasedness_suite(draws=20000)
    assert res.passed, res.detail
