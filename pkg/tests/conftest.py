import numpy as np
import pytest

from snnclust import nn


def finite_difference(f, tensors, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``tensors`` (perturbed in place)."""
    out = []
    for t in tensors:
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            orig = t[idx]
            t[idx] = orig + h
            up = f()
            t[idx] = orig - h
            down = f()
            t[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def relative_error(a, b):
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def tiny_net(d, c, seed, hidden=(5, 4, 6)):
    """Small autoencoder with non-zero biases.

    Zero biases put ReLU units exactly on their kink whenever a whole input
    row is zero, where central differences see half a slope.
    """
    params = nn.build_autoencoder(d, c, seed, hidden)
    rng = np.random.default_rng(seed + 1000)
    for b in params.biases:
        b[:] = rng.normal(0.0, 0.3, size=b.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record a one-line PASS/FAIL for an acceptance criterion, then assert it."""
    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
