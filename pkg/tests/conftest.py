import numpy as np
import pytest

from bhphase.fock import HamiltonianParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def ref_params():
    """Two-site reference model used throughout the residual checks."""
    return HamiltonianParams((0.0, 0.5), 1.0, 0.1)


def random_amplitudes(rng, M, n=None):
    shape = (M,) if n is None else (n, M)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance check; the verdict is printed in the terminal summary."""
    def record(name, passed, detail=""):
        ACCEPTANCE[name] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: (int(s.split()[1].rstrip(":")), s)):
        passed, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
