import time

import numpy as np
import pytest

from daur.algorithm import initialize
from daur.model import dpe_objective
from daur.oracle import GridTooLargeError, finite_diff_check, grid_search_dpe
from daur.scenario import TopologySpec, generate_scenario


@pytest.fixture(scope="module")
def one_one():
    return generate_scenario(TopologySpec(n_users=1, n_servers=1, seed=2))


def test_quadratic_exact():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = lambda v: (0.5 * v @ Q @ v + v.sum(), Q @ v + 1)
    assert finite_diff_check(f, [0.3, -0.7]) <= 1e-10


def test_detects_wrong_gradient():
    f = lambda v: (float(v @ v), 3 * v)
    assert finite_diff_check(f, [1.0, 2.0]) > 0.1


def test_reports_nonfinite():
    f = lambda v: (float(np.sqrt(v[0]) + v[1]), np.array([0.5 / np.sqrt(v[0]), 1.0]))
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match=r"\[0\]"):
        finite_diff_check(f, [0.0, 1.0])


def test_grid_single_pair(one_one):
    t = time.perf_counter()
    res = grid_search_dpe(one_one, np.ones((1, 1)))
    assert time.perf_counter() - t < 10
    assert res.value == pytest.approx(dpe_objective(one_one, res.alloc), rel=1e-12)
    init, _ = initialize(one_one)
    assert res.value >= dpe_objective(one_one, init)
    # gamma is within one grid step of 1/2 when omega_b = 1
    assert abs(res.alloc.gamma[0, 0] - 0.5) <= 0.05 + 1e-12


def test_grid_beats_random_points(one_one):
    # no grid point can beat the reported optimum
    res = grid_search_dpe(one_one, np.ones((1, 1)), step=0.25)
    rng = np.random.default_rng(0)
    g = np.linspace(0, 1, 5)
    for _ in range(200):
        a = res.alloc.copy()
        a.phi_off[0], a.rho[0], a.psi[0], a.phi_bw[0, 0], a.zeta[0, 0] = rng.choice(g, 5)
        a.gamma[0, 0] = rng.choice(g[1:-1])
        assert dpe_objective(one_one, a) <= res.value * (1 + 1e-12)


def test_grid_two_users_respects_budget():
    p = generate_scenario(TopologySpec(n_users=2, n_servers=1, seed=1))
    res = grid_search_dpe(p, np.ones((2, 1)), step=0.1)
    assert res.alloc.is_feasible(integral=True, tol=1e-12)
    assert res.value == pytest.approx(dpe_objective(p, res.alloc), rel=1e-12)


def test_grid_two_servers_matches_model():
    p = generate_scenario(TopologySpec(n_users=2, n_servers=2, seed=1))
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    res = grid_search_dpe(p, x, step=0.1)
    assert res.value == pytest.approx(dpe_objective(p, res.alloc), rel=1e-12)


def test_grid_refuses_large_work(params):
    x = np.zeros((params.n_users, params.n_servers))
    x[:, 0] = 1
    with pytest.raises(GridTooLargeError):
        grid_search_dpe(params, x, step=0.01, max_work=10**6)


def test_grid_rejects_fractional_x(one_one):
    with pytest.raises(ValueError):
        grid_search_dpe(one_one, np.full((1, 1), 0.5))
