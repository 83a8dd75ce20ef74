import numpy as np
import pytest

from sieve_hte.nuisance import ObservationFrame

GAMMA0 = np.array([0.8, -0.6, 0.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def index_data(n, link, seed=0, noise=0.0, gamma=GAMMA0):
    """Covariates and responses y = link(gamma^T x) + noise."""
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, gamma.size))
    y = link(x @ gamma) + noise * r.standard_normal(n)
    return x, y


def toy_frame(n=200, seed=0, p=3):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, p))
    d = (r.uniform(size=n) < 0.5).astype(float)
    y = x[:, 0] + d * (x @ GAMMA0[:p] if p == 3 else 1.0) + r.standard_normal(n)
    return ObservationFrame(y, d, x)


ACCEPTANCE_LINES = []


def record_criterion(number, title, checks):
    """Store one PASS/FAIL line for the terminal summary; returns the verdict."""
    ok = all(passed for _, passed in checks)
    detail = "; ".join(f"{text} [{'ok' if passed else 'FAIL'}]" for text, passed in checks)
    ACCEPTANCE_LINES.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
