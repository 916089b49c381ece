"""Fast numerical self-checks, each comparing against an independent oracle.

Every suite returns a :class:`SuiteResult`; :func:`run_all` prints one
verdict line per suite.  The acceptance tests call the same suites at full
instance counts.
"""

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .diffusion import EpsilonNet, forward_noise, make_schedule, reverse_sample
from .estimate import match_sources
from .gp import GpHyper, build_kernel, gp_grad_closed_form, gp_penalty, time_grid
from .latent import StartDistribution, kl_penalty


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _rel(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def _penalty_value(S, gammas, t, hyper):
    with ad.no_grad():
        kernels = [build_kernel(t, float(g), hyper) for g in gammas]
        return float(gp_penalty(S, kernels).value)


@_timed
def gp_gradient_suite(instances=50, seed=0, closed_form=gp_grad_closed_form, h=1e-5,
                      tol_exact=1e-8, tol_fd=1e-5):
    """Closed-form GP gradients vs reverse-mode autodiff vs central differences.

    ``closed_form`` is injectable so a deliberately broken version can be
    shown to fail.
    """
    rng = np.random.default_rng(seed)
    worst_exact = worst_fd_cf = worst_fd_ad = 0.0
    for _ in range(instances):
        T = int(rng.integers(2, 33))
        n = int(rng.integers(1, 4))
        hyper = GpHyper(sigma_f2=float(rng.uniform(0.5, 2.0)), xi=float(10 ** rng.uniform(-3, -1)))
        t = time_grid(T)
        S0 = rng.standard_normal((T, n))
        g0 = np.log(rng.uniform(0.05, 0.5, size=n))

        S = ad.Parameter(S0, "S")
        gammas = [ad.Parameter(g, f"gamma{k}") for k, g in enumerate(g0)]
        kernels = [build_kernel(t, g, hyper) for g in gammas]
        grads = ad.backward(gp_penalty(S, kernels), [S] + gammas)
        ad_s = grads[S]
        ad_g = np.array([grads[g] for g in gammas])

        cf_s, cf_ell = closed_form(S0, kernels)
        ell = np.array([float(k.ell.value) for k in kernels])
        cf_s = cf_s / (T * n)
        cf_g = cf_ell * (ell - 1e-6) / (T * n)  # d ell / d gamma = exp(gamma)

        fd_s = np.zeros_like(S0)
        for idx in np.ndindex(S0.shape):
            Sp, Sm = S0.copy(), S0.copy()
            Sp[idx] += h
            Sm[idx] -= h
            fd_s[idx] = (_penalty_value(Sp, g0, t, hyper) - _penalty_value(Sm, g0, t, hyper)) / (2 * h)
        fd_g = np.zeros(n)
        for k in range(n):
            gp, gm = g0.copy(), g0.copy()
            gp[k] += h
            gm[k] -= h
            fd_g[k] = (_penalty_value(S0, gp, t, hyper) - _penalty_value(S0, gm, t, hyper)) / (2 * h)

        cf = np.concatenate([cf_s.ravel(), cf_g])
        adv = np.concatenate([ad_s.ravel(), ad_g])
        fd = np.concatenate([fd_s.ravel(), fd_g])
        worst_exact = max(worst_exact, _rel(cf, adv))
        worst_fd_cf = max(worst_fd_cf, _rel(cf, fd))
        worst_fd_ad = max(worst_fd_ad, _rel(adv, fd))
    passed = worst_exact < tol_exact and max(worst_fd_cf, worst_fd_ad) < tol_fd
    detail = (f"{instances} instances, closed-form vs autodiff {worst_exact:.2e} (< {tol_exact:g}), "
              f"vs finite differences {max(worst_fd_cf, worst_fd_ad):.2e} (< {tol_fd:g})")
    return SuiteResult("gp-gradients", passed, detail)


@_timed
def kl_suite(draws=1000, seed=0, T=16, tol=1e-12):
    """KL penalty is nonnegative and vanishes, with zero gradient, at N(0, I)."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(draws):
        n = int(rng.integers(1, 4))
        scale = 10 ** rng.uniform(-4, 0.5)  # include draws close to the minimizer
        dists = [StartDistribution(ad.Parameter(rng.normal(0, scale, T), "mu"),
                                   ad.Parameter(rng.normal(0, scale, T), "log_sigma"))
                 for _ in range(n)]
        with ad.no_grad():
            worst = min(worst, float(kl_penalty(dists).value))
    dists = [StartDistribution.standard(T, f"b{k}") for k in range(3)]
    params = [p for d in dists for p in (d.mu, d.log_sigma)]
    val = kl_penalty(dists)
    grads = ad.backward(val, params)
    gmax = max(float(np.max(np.abs(g))) for g in grads.values())
    passed = worst >= 0.0 and abs(float(val.value)) < tol and gmax < tol
    detail = (f"min over {draws} draws {worst:.3g} (>= 0), at the standard normal "
              f"value {abs(float(val.value)):.1e} and max |grad| {gmax:.1e} (< {tol:g})")
    return SuiteResult("kl-minimizer", passed, detail)


def _toy_net(T, rng):
    net = EpsilonNet(T, hidden=16, rng=rng, name="toy")
    net.W3.value = rng.standard_normal(net.W3.shape) * 0.5
    net.b3.value = rng.standard_normal(T) * 0.1
    return net


def _step_losses(net, S, sched, tau, etas):
    """Per-draw denoising loss of one branch at a fixed step for a batch of noises."""
    x, _ = forward_noise(np.broadcast_to(S, etas.shape), tau, sched, None, eta=etas)
    pred = net(x, tau / sched.L).value
    return np.mean((pred - etas) ** 2, axis=1)


@_timed
def unbiasedness_suite(draws=20000, seed=0, L=5, T=8, n=2, n_se=4.0):
    """Single-step denoising loss vs the average over every step.

    The single-step side calls the training loss itself, which draws one
    shared step per call.  The reference evaluates all ``L`` steps on
    independent noise with a separate vectorized formula and averages them.
    The two means must agree within ``n_se`` standard errors.
    """
    from .objective import denoising_loss
    rng = np.random.default_rng(seed)
    sched = make_schedule(L)
    nets = [_toy_net(T, rng) for _ in range(n)]
    S = rng.standard_normal((T, n))
    with ad.no_grad():
        single = np.array([float(denoising_loss(S, nets, sched, rng).value) for _ in range(draws)])
        full = np.zeros(draws)
        for tau in range(1, L + 1):
            for k, net in enumerate(nets):
                etas = rng.standard_normal((draws, T))
                full += _step_losses(net, S[:, k], sched, tau, etas) / (L * n)
    diff = single.mean() - full.mean()
    se = np.sqrt(single.var(ddof=1) / draws + full.var(ddof=1) / draws)
    passed = abs(diff) <= n_se * se
    detail = (f"{draws} draws, single-step mean {single.mean():.5f} vs all-step mean "
              f"{full.mean():.5f}, gap {abs(diff) / se:.2f} SE (<= {n_se:g})")
    return SuiteResult("denoising-unbiasedness", passed, detail)


@_timed
def sampler_suite(seed=0, L=20, T=32, tol=1e-10):
    """With a zero output layer the reverse chain telescopes to ``z / sqrt(abar_L)``."""
    rng = np.random.default_rng(seed)
    sched = make_schedule(L)
    net = EpsilonNet(T, hidden=32, rng=rng)
    z = rng.standard_normal(T)
    with ad.no_grad():
        s, path = reverse_sample(net, z, sched, record_path=True, eps_num=0.0)
    target = z / np.sqrt(sched.alpha_bar[L])
    err = _rel(s.value, target)
    shape_ok = (len(path) == L + 1 and np.array_equal(path[0], z)
                and np.array_equal(path[-1], s.value))
    passed = err < tol and shape_ok
    detail = f"telescoping error {err:.1e} (< {tol:g}), path has {len(path)} states (want {L + 1})"
    return SuiteResult("reverse-sampler", passed, detail)


def brute_force_match(est, truth):
    """Score all signed permutations directly; returns (perm, signs, corrs).

    Independent of :func:`match_sources`: correlations come from
    ``np.corrcoef`` and the search runs over signs explicitly.
    """
    n = truth.shape[1]
    C = np.corrcoef(est.T, truth.T)[:n, n:]  # C[i, j] = corr(est_i, truth_j)
    best = None
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            score = np.mean([signs[j] * C[perm[j], j] for j in range(n)])
            if best is None or score > best[0] + 1e-12:
                best = (score, perm, np.array(signs))
    _, perm, signs = best
    corrs = np.array([signs[j] * C[perm[j], j] for j in range(n)])
    return perm, signs, corrs


@_timed
def matching_suite(instances=200, seed=0, T=64, n=3):
    """match_sources against exhaustive signed-permutation scoring."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for i in range(instances):
        truth = rng.standard_normal((T, n))
        if i % 2 == 0:
            perm = rng.permutation(n)
            signs = rng.choice([-1.0, 1.0], size=n)
            est = truth[:, perm] * signs * rng.uniform(0.2, 5.0, size=n)
            est = est + rng.uniform(0.0, 2.0) * rng.standard_normal((T, n))
        else:
            est = rng.standard_normal((T, n))
        res = match_sources(est, truth)
        bperm, bsigns, bcorr = brute_force_match(est, truth)
        same = (tuple(res.permutation) == tuple(bperm) and np.array_equal(res.signs, bsigns)
                and np.allclose(res.correlations, bcorr, rtol=0, atol=1e-12))
        mismatches += not same
    passed = mismatches == 0
    detail = f"{instances} instances, {mismatches} disagreements with the brute-force oracle"
    return SuiteResult("matching-oracle", passed, detail)


def run_all(quick=False, stream=print):
    """Run every suite, print one line each, return True when all pass."""
    if quick:
        results = [gp_gradient_suite(instances=10), kl_suite(draws=200),
                   unbiasedness_suite(draws=4000), sampler_suite(), matching_suite(instances=50)]
    else:
        results = [gp_gradient_suite(), kl_suite(), unbiasedness_suite(),
                   sampler_suite(), matching_suite()]
    for r in results:
        stream(r.line())
    ok = all(r.passed for r in results)
    stream(f"selfcheck: {'all suites passed' if ok else 'FAILED'}")
    return ok
