import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def soft_posterior(rng, n, K, conc=1.0):
    """Random rows on the simplex."""
    return rng.dirichlet(np.full(K, conc), size=n)


ACCEPTANCE = {}


def record(criterion, ok, detail=""):
    """Store an acceptance verdict for the end-of-run summary and return it."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(str(k)), str(k))):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
