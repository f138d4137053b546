import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daur.nlp import ConcaveProgram, InfeasibleStartError, maximize

cp = pytest.importorskip("cvxpy")


def test_unconstrained_quadratic():
    prog = ConcaveProgram(1, lambda v: (-(v[0] - 0.3) ** 2, np.array([-2 * (v[0] - 0.3)])),
                          x0=[0.9], lb=[0.0], ub=[1.0])
    res = maximize(prog)
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(0.3, abs=1e-6)


def test_lp_corner():
    c = np.array([1.0, 1.0])
    prog = ConcaveProgram(2, lambda v: (c @ v, c), x0=[0.2, 0.2], lb=0.0, A_ub=[[1.0, 1.0]],
                          b_ub=[1.0])
    res = maximize(prog, tol=1e-10)
    assert res.value == pytest.approx(1.0, abs=1e-8)


def test_ball_constraint():
    ball = lambda v: (v @ v - 1.0, 2 * v, 2 * np.eye(2))
    c = np.array([0.6, 0.8])
    prog = ConcaveProgram(2, lambda v: (c @ v, c), x0=[0.0, 0.0], constraints=[ball])
    res = maximize(prog)
    assert np.allclose(res.x, c, atol=1e-6)


def test_infeasible_start_rejected():
    prog = ConcaveProgram(1, lambda v: (v[0], np.ones(1)), x0=[1.0], lb=[0.0], ub=[1.0])
    with pytest.raises(InfeasibleStartError):
        maximize(prog)


def test_bad_bounds():
    with pytest.raises(ValueError):
        ConcaveProgram(1, lambda v: (0.0, np.zeros(1)), x0=[0.5], lb=[1.0], ub=[0.0])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_log_utility_matches_cvxpy(seed):
    # maximize sum w log(1 + a v) over a simplex-capped box
    rng = np.random.default_rng(seed)
    n = 5
    w, a = rng.uniform(0.5, 2.0, n), rng.uniform(0.5, 5.0, n)
    f = lambda v: (float(w @ np.log1p(a * v)), w * a / (1 + a * v))
    prog = ConcaveProgram(n, f, x0=np.full(n, 0.1), lb=0.0, ub=1.0, A_ub=np.ones((1, n)),
                          b_ub=[1.0], hessian=lambda v: np.diag(-w * a ** 2 / (1 + a * v) ** 2))
    res = maximize(prog, tol=1e-10)
    x = cp.Variable(n)
    ref = cp.Problem(cp.Maximize(w @ cp.log(1 + cp.multiply(a, x))),
                     [x >= 0, x <= 1, cp.sum(x) <= 1]).solve(solver=cp.CLARABEL)
    assert res.value == pytest.approx(ref, rel=1e-6)
    assert prog.residual(res.x) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_concave_quadratic_matches_grid(seed):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((2, 2))
    Q = -(R @ R.T + 0.1 * np.eye(2))
    c = rng.standard_normal(2)
    a = rng.uniform(0.2, 1.0, 2)
    f = lambda v: (float(0.5 * v @ Q @ v + c @ v), Q @ v + c)
    prog = ConcaveProgram(2, f, x0=[0.05, 0.05], lb=0.0, ub=1.0, A_ub=[a], b_ub=[1.0],
                          hessian=lambda v: Q)
    res = maximize(prog)
    g = np.linspace(0, 1, 101)
    V1, V2 = np.meshgrid(g, g, indexing="ij")
    vals = 0.5 * (Q[0, 0] * V1 ** 2 + 2 * Q[0, 1] * V1 * V2 + Q[1, 1] * V2 ** 2) + c[0] * V1 + c[1] * V2
    vals[a[0] * V1 + a[1] * V2 > 1.0] = -np.inf
    assert abs(res.value - vals.max()) <= 1e-3 or res.value >= vals.max()
