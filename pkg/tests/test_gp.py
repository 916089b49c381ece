import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stradiff import autodiff as ad
from stradiff.errors import ShapeError
from stradiff.gp import (LOG_2PI, GpHyper, build_kernel, dK_dell, gamma_for, gp_grad_closed_form,
                         gp_penalty, lengthscale, time_grid)

from conftest import central_diff, rel_err


def kernel_for(T, ell, sigma_f2=1.0, xi=1e-4):
    return build_kernel(time_grid(T), gamma_for(ell), GpHyper(sigma_f2, xi))


def dense_neg_logprob(S, Ks):
    """-(1/(Tn)) log N(S; 0, K) with an explicit inverse and slogdet."""
    T, n = S.shape
    total = 0.0
    for k in range(n):
        Kinv = np.linalg.inv(Ks[k])
        _, ld = np.linalg.slogdet(Ks[k])
        total += -0.5 * (T * LOG_2PI + ld + S[:, k] @ Kinv @ S[:, k])
    return -total / (T * n)


def test_time_grid_endpoints():
    t = time_grid(7)
    assert t[0] == 0.0 and t[-1] == 1.0
    assert np.all(np.diff(t) > 0)
    assert np.array_equal(time_grid(1), [0.0])


def test_lengthscale_positive_for_very_negative_gamma():
    assert lengthscale(-800.0) == pytest.approx(1e-6)
    assert lengthscale(np.log(0.1)) == pytest.approx(0.1 + 1e-6)


def test_kernel_diagonal():
    K = kernel_for(5, 0.2).K.value
    assert np.allclose(np.diag(K), 1.0001, rtol=0, atol=1e-15)


def test_kernel_single_point():
    kern = build_kernel(time_grid(1), 0.0, GpHyper(2.0, 1e-4))
    assert kern.K.value.shape == (1, 1)
    assert kern.K.value[0, 0] == pytest.approx(2.0001)
    assert kern.logdet == pytest.approx(np.log(2.0001), abs=1e-14)


def test_kernel_offdiagonal_value():
    kern = build_kernel(np.array([0.0, 0.5, 1.0]), gamma_for(0.5), GpHyper(1.0, 0.0))
    # exp(gamma) + 1e-6 = 0.5 exactly up to rounding
    assert kern.K.value[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-14)


def test_kernel_symmetric_and_factor_reconstructs():
    kern = kernel_for(40, 0.07)
    K = kern.K.value
    assert np.max(np.abs(K - K.T)) <= 1e-12
    L = kern.chol
    assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-10


def test_penalty_zero_sources():
    T, n = 6, 2
    kernels = [kernel_for(T, 0.1), kernel_for(T, 0.3)]
    val = gp_penalty(np.zeros((T, n)), kernels).item()
    expected = sum(T * LOG_2PI + k.logdet for k in kernels) / (2 * T * n)
    assert val == pytest.approx(expected, abs=1e-12)


def test_penalty_hand_example():
    kern = build_kernel(time_grid(1), gamma_for(1.0), GpHyper(1.0, 1e-300))
    val = gp_penalty(np.array([[2.0]]), [kern]).item()
    assert val == pytest.approx(0.5 * (LOG_2PI + 0.0 + 4.0), abs=1e-12)


def test_doubling_sources_scales_quadratic_term(rng):
    T = 8
    kern = kernel_for(T, 0.2)
    s = rng.standard_normal((T, 1))
    base = gp_penalty(np.zeros((T, 1)), [kern]).item()
    q1 = gp_penalty(s, [kern]).item() - base
    q2 = gp_penalty(2 * s, [kern]).item() - base
    assert q2 == pytest.approx(4 * q1, rel=1e-10)


@pytest.mark.parametrize("T,n", [(1, 1), (5, 2), (16, 3)])
def test_penalty_matches_dense_oracle(rng, T, n):
    S = rng.standard_normal((T, n))
    ells = rng.uniform(0.05, 0.6, size=n)
    kernels = [kernel_for(T, e, xi=1e-3) for e in ells]
    val = gp_penalty(S, kernels).item()
    ref = dense_neg_logprob(S, [k.K.value for k in kernels])
    assert abs(val - ref) < 1e-9


def test_penalty_shape_errors():
    kern = kernel_for(4, 0.1)
    with pytest.raises(ShapeError):
        gp_penalty(np.zeros((4, 2)), [kern])
    with pytest.raises(ShapeError):
        gp_penalty(np.zeros((5, 1)), [kern])


def test_closed_form_zero_sources():
    T = 6
    kern = kernel_for(T, 0.2)
    gs, gl = gp_grad_closed_form(np.zeros((T, 1)), [kern])
    assert np.all(gs == 0)
    K = kern.K.value
    dK = dK_dell(time_grid(T), float(kern.ell.value))
    assert gl[0] == pytest.approx(0.5 * np.trace(np.linalg.solve(K, dK)), rel=1e-10)


def test_closed_form_single_point_has_zero_ell_gradient():
    kern = kernel_for(1, 0.2)
    _, gl = gp_grad_closed_form(np.array([[1.5]]), [kern])
    assert gl[0] == 0.0


def test_closed_form_matches_finite_differences(rng):
    T, n = 5, 2
    t = time_grid(T)
    hyper = GpHyper(1.3, 1e-3)
    S = rng.standard_normal((T, n))
    gammas = np.log([0.15, 0.4])

    def scaled_penalty(S_, g_):
        with ad.no_grad():
            ks = [build_kernel(t, g, hyper) for g in g_]
            return gp_penalty(S_, ks).item() * T * n

    kernels = [build_kernel(t, g, hyper) for g in gammas]
    gs, gl = gp_grad_closed_form(S, kernels)
    fd_s = central_diff(lambda x: scaled_penalty(x, gammas), S)
    fd_g = central_diff(lambda g: scaled_penalty(S, g), gammas)
    assert rel_err(gs, fd_s) < 1e-5
    # closed form is per unit ell; chain through d ell / d gamma = exp(gamma)
    assert rel_err(gl * np.exp(gammas), fd_g) < 1e-5


@settings(max_examples=25, deadline=None)
@given(T=st.integers(2, 32), n=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_closed_form_matches_autodiff(T, n, seed):
    rng = np.random.default_rng(seed)
    t = time_grid(T)
    hyper = GpHyper(float(rng.uniform(0.5, 2)), float(10 ** rng.uniform(-4, -1)))
    S = ad.Parameter(rng.standard_normal((T, n)), "S")
    gammas = [ad.Parameter(np.log(rng.uniform(0.03, 0.6)), f"g{k}") for k in range(n)]
    kernels = [build_kernel(t, g, hyper) for g in gammas]
    grads = ad.backward(gp_penalty(S, kernels), [S] + gammas)
    gs, gl = gp_grad_closed_form(S.value, kernels)
    assert rel_err(grads[S], gs / (T * n)) < 1e-8
    ad_g = np.array([grads[g] for g in gammas])
    cf_g = gl * np.array([np.exp(g.value) for g in gammas]) / (T * n)
    assert rel_err(ad_g, cf_g) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_penalty_invariant_to_source_relabeling(seed):
    rng = np.random.default_rng(seed)
    T, n = 10, 3
    S = rng.standard_normal((T, n))
    kernels = [kernel_for(T, e) for e in rng.uniform(0.05, 0.5, n)]
    perm = rng.permutation(n)
    a = gp_penalty(S, kernels).item()
    b = gp_penalty(S[:, perm], [kernels[i] for i in perm]).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_white_noise_costs_more_under_long_lengthscale(rng):
    T = 30
    short, long_ = kernel_for(T, 0.02), kernel_for(T, 0.3)

    def quad(kern, s):
        return ad.inv_quad(kern.K, s).item()

    draws = rng.standard_normal((20, T))
    assert np.mean([quad(long_, s) for s in draws]) > np.mean([quad(short, s) for s in draws])


def test_penalty_gradient_reaches_gamma():
    T = 6
    g = ad.Parameter(np.log(0.2), "g")
    kern = build_kernel(time_grid(T), g, GpHyper())
    grads = ad.backward(gp_penalty(np.ones((T, 1)), [kern]), [g])
    assert grads[g] != 0.0
