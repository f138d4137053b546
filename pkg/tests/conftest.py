import numpy as np
import pytest

from daur.model import Allocation
from daur.scenario import TopologySpec, generate_scenario


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def params():
    return generate_scenario(TopologySpec(seed=0))


@pytest.fixture(scope="session")
def small_params():
    return generate_scenario(TopologySpec(n_users=3, n_servers=2, seed=7))


def random_allocation(rng, n, m, integral=True, interior=False):
    """Feasible allocation with random association and shares."""
    lo = 0.05 if interior else 0.0
    if integral:
        x = np.zeros((n, m))
        x[np.arange(n), rng.integers(0, m, n)] = 1.0
    else:
        x = rng.dirichlet(np.ones(m), size=n)
    bw = rng.uniform(0.05, 1.0, (n, m))
    z = rng.uniform(0.05, 1.0, (n, m))
    for arr in (bw, z):
        load = (x * arr).sum(axis=0)
        arr /= np.maximum(load, 1.0)[None, :] * 1.001
    return Allocation(x=x, phi_off=rng.uniform(lo, 1.0 - lo, n), gamma=rng.uniform(0.05, 0.95, (n, m)),
                      phi_bw=bw, rho=rng.uniform(max(lo, 0.01), 1.0, n), zeta=z,
                      psi=rng.uniform(max(lo, 0.01), 1.0, n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
