import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daur.sdp import SdpProblem, solve_sdp

cp = pytest.importorskip("cvxpy")


def E(n, i, j):
    M = np.zeros((n, n))
    M[i, j] = M[j, i] = 1.0
    return M


def test_identity_cost_unit_entry():
    res = solve_sdp(SdpProblem(np.eye(3), [(E(3, 0, 0), "eq", 1.0)]))
    assert res.status == "optimal"
    assert res.value == pytest.approx(1.0, abs=1e-8)
    target = np.zeros((3, 3))
    target[0, 0] = 1.0
    assert np.allclose(res.S, target, atol=1e-6)


def test_boundary_optimum_trace_four():
    # min S11 s.t. S11 + S22 = 4, S12 = 1: S11 (4 - S11) = 1 on the boundary
    res = solve_sdp(SdpProblem(E(2, 0, 0), [(np.eye(2), "eq", 4.0),
                                                (E(2, 0, 1) / 2, "eq", 1.0)]))
    assert res.status == "optimal"
    assert res.value == pytest.approx(2 - np.sqrt(3), abs=1e-7)


def test_trace_two_is_a_single_point():
    # with S11 + S22 = 2 the only PSD point is [[1, 1], [1, 1]]; no interior
    res = solve_sdp(SdpProblem(E(2, 0, 0), [(np.eye(2), "eq", 2.0),
                                                (E(2, 0, 1) / 2, "eq", 1.0)]))
    assert res.value == pytest.approx(1.0, abs=1e-3)


def test_min_eigenvalue_times_trace():
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    res = solve_sdp(SdpProblem(C, [(np.eye(2), "eq", 4.0)]))
    assert res.value == pytest.approx(4 * np.linalg.eigvalsh(C)[0], abs=1e-7)


def test_inequality_constraint():
    res = solve_sdp(SdpProblem(-np.eye(2), [(np.eye(2), "le", 3.0)]))
    assert res.value == pytest.approx(-3.0, abs=1e-7)


def test_infeasible_detected():
    res = solve_sdp(SdpProblem(np.eye(2), [(E(2, 0, 0), "eq", -1.0)]))
    assert res.status == "infeasible"


def test_shape_checks():
    with pytest.raises(ValueError):
        SdpProblem(np.eye(2), [(np.eye(3), "eq", 1.0)])
    with pytest.raises(ValueError):
        SdpProblem(np.eye(2), [(np.eye(2), "ge", 1.0)])


def random_problem(rng, n, k, n_le):
    X0 = rng.standard_normal((n, n))
    X0 = X0 @ X0.T / n + 0.1 * np.eye(n)
    cons = [(np.eye(n), "eq", float(np.trace(X0)))]  # bounds the feasible set
    for i in range(k):
        A = rng.standard_normal((n, n))
        A = 0.5 * (A + A.T)
        val = float(np.sum(A * X0))
        if i < n_le:
            cons.append((A, "le", val + abs(rng.standard_normal())))
        else:
            cons.append((A, "eq", val))
    C = rng.standard_normal((n, n))
    return SdpProblem(0.5 * (C + C.T), cons)


def cvxpy_value(prob):
    n = prob.dim
    S = cp.Variable((n, n), symmetric=True)
    cons = [S >> 0]
    for A, sense, rhs in prob.constraints:
        cons.append(cp.trace(A @ S) == rhs if sense == "eq" else cp.trace(A @ S) <= rhs)
    return cp.Problem(cp.Minimize(cp.trace(prob.cost @ S)), cons).solve(solver=cp.CLARABEL)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 6), k=st.integers(0, 5), n_le=st.integers(0, 3))
def test_random_sdp_matches_cvxpy(seed, n, k, n_le):
    prob = random_problem(np.random.default_rng(seed), n, k, n_le)
    res = solve_sdp(prob)
    assert res.status in ("optimal", "optimal_inaccurate")
    assert res.value == pytest.approx(cvxpy_value(prob), rel=1e-6, abs=1e-6)
    assert np.linalg.eigvalsh(res.S).min() >= -1e-8
    assert abs(res.gap) <= 1e-6 * (1 + abs(res.value))
    assert np.max(prob.residuals(res.S)) <= 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_weak_duality_certificate(seed):
    prob = random_problem(np.random.default_rng(seed), 4, 3, 1)
    res = solve_sdp(prob)
    assert np.linalg.eigvalsh(res.Z).min() >= -1e-6 * (1 + np.abs(res.Z).max())
    assert res.dual_value <= res.value + 1e-8 * (1 + abs(res.value))
