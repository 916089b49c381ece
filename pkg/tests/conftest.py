import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def random_spd(rng, n, jitter=0.5):
    X = rng.standard_normal((n, n))
    return X @ X.T + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def acceptance_line(criterion, title, passed, detail):
    line = f"criterion {criterion:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
