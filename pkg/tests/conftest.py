import numpy as np
import pytest

from blockhankel.spectra import EnsembleSpec, ar1, raised_cosine, tabulated, white


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def mixed_spec():
    return EnsembleSpec.cycle(3, 4, 16, [white(), ar1(0.5), raised_cosine(0.4)])


def bumpy_density():
    nu = np.linspace(0, 1, 33)
    vals = 1.2 + 0.5 * np.cos(2 * np.pi * nu) + 0.2 * np.sin(4 * np.pi * nu)
    vals[-1] = vals[0]
    return tabulated(nu, vals)


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_pd(rng, n, floor=0.1):
    G = crandn(rng, n, n)
    return G @ G.conj().T / n + floor * np.eye(n)


ACCEPTANCE_RESULTS: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_RESULTS[criterion] = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
