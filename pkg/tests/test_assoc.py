import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from daur.algorithm import initialize
from daur.assoc import (PHI_MAX, assemble_coefficients, association_aux, build_sdr, extract_q,
                        lift, normalize_rows, pack_q, qcqp_loop, rescale_shares,
                        round_association, scalar_objective, set_gamma_optimal, unpack_q,
                        x_index)
from daur.fp import fp_loop
from daur.model import Allocation
from daur.sdp import solve_sdp


@pytest.fixture(scope="module")
def resource_point(params):
    a, aux = initialize(params)
    return fp_loop(params, a, aux).alloc


@pytest.fixture(scope="module")
def mats(params, resource_point):
    a = resource_point
    return assemble_coefficients(params, a, association_aux(params, a))


def test_pack_roundtrip():
    rng = np.random.default_rng(0)
    x, phi = rng.random((4, 3)), rng.random(4)
    q = pack_q(x, phi)
    x2, phi2 = unpack_q(q, 4, 3)
    assert np.array_equal(x, x2) and np.array_equal(phi, phi2)
    assert q[x_index(4, 2, 1)] == x[2, 1]


def test_quadratic_form_matches_sums(mats):
    rng = np.random.default_rng(1)
    N, M = mats.n_users, mats.n_servers
    for _ in range(100):
        x, phi = rng.random((N, M)), rng.random(N)
        q = pack_q(x, phi)
        direct = scalar_objective(mats, x, phi)
        assert mats.value(q) == pytest.approx(direct, rel=1e-12, abs=1e-12 * np.abs(mats.C))
        bil = x * phi[:, None]
        assert q @ mats.P0 @ q == pytest.approx(np.sum(mats.B * bil), rel=1e-12, abs=1e-18)
        assert q @ mats.P0_ts @ q == pytest.approx(np.sum(mats.w_ts * mats.d_ts * bil), rel=1e-12)
        assert mats.W0 @ q == pytest.approx(np.sum(mats.A * phi), rel=1e-12, abs=1e-18)


def test_sdr_constraints_hold_at_lifted_feasible_point(mats):
    rng = np.random.default_rng(2)
    N, M = mats.n_users, mats.n_servers
    prob = build_sdr(mats)
    for _ in range(20):
        x = np.zeros((N, M))
        x[np.arange(N), rng.integers(0, M, N)] = 1.0
        phi = rng.uniform(0, PHI_MAX, N)
        S = lift(pack_q(x, phi))
        res = prob.residuals(S)
        # couplings can bind for random x; every other row must hold exactly
        assert np.all(res[:-1 - 2 * M] <= 1e-12) and res[-1] <= 1e-12


def test_extract_recovers_rank_one(mats):
    rng = np.random.default_rng(3)
    q = rng.uniform(0, 0.9, mats.q_len)
    assert np.allclose(extract_q(lift(q), mats), q)
    with pytest.raises(ValueError):
        extract_q(-np.eye(3))


def test_gamma_half_at_unit_omega():
    a = Allocation(x=[[1.0]], phi_off=[0.5], gamma=[[0.3]], phi_bw=[[1.0]], rho=[1.0],
                   zeta=[[1.0]], psi=[1.0])
    assert set_gamma_optimal(a).gamma[0, 0] == 0.5
    with pytest.warns(RuntimeWarning):
        assert set_gamma_optimal(a, omega_b=3.0).gamma[0, 0] == pytest.approx(0.25)


def test_normalize_rows():
    x = np.array([[0.6, 0.9], [0.2, 0.3]])
    out = normalize_rows(x)
    assert out[0].sum() == pytest.approx(1.0) and np.array_equal(out[1], x[1])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), m=st.integers(1, 4), seed=st.integers(0, 10**6),
       method=st.sampled_from(["hungarian", "argmax"]))
def test_rounding_is_an_assignment(n, m, seed, method):
    xr = np.random.default_rng(seed).random((n, m))
    x = round_association(xr, method)
    assert np.all((x == 0) | (x == 1)) and np.all(x.sum(axis=1) == 1)
    if method == "hungarian":
        assert np.all(x.sum(axis=0) <= -(-n // m))


def test_rounding_keeps_integral_input():
    x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(round_association(x), x)


def test_rounding_prefers_heavy_weights():
    xr = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.4, 0.6]])
    assert np.array_equal(round_association(xr), np.array([[1, 0], [1, 0], [0, 1], [0, 1.0]]))


def test_unknown_rounding():
    with pytest.raises(ValueError):
        round_association(np.ones((2, 2)), "random")


def test_rescale_shares_restores_couplings():
    a = Allocation(x=[[1.0], [1.0]], phi_off=[0.5, 0.5], gamma=[[0.5], [0.5]],
                   phi_bw=[[0.8], [0.6]], rho=[1, 1], zeta=[[0.5], [0.4]], psi=[1, 1])
    out = rescale_shares(a)
    assert out.is_feasible() and (out.x * out.phi_bw).sum() <= 1.0
    assert np.array_equal(out.zeta, a.zeta)


def test_sdr_lower_bounds_lifted_points(mats, resource_point):
    prob = build_sdr(mats)
    res = solve_sdp(prob)
    assert res.status in ("optimal", "optimal_inaccurate")
    rng = np.random.default_rng(4)
    for _ in range(100):
        q = pack_q(resource_point.x, rng.uniform(0, PHI_MAX, mats.n_users))
        assert np.max(prob.residuals(lift(q))) <= 1e-12
        assert res.value <= mats.value(q) + 1e-9 * (1 + abs(mats.value(q)))


def test_qcqp_loop_output_feasible(params):
    a, aux = initialize(params)
    a = fp_loop(params, a, aux).alloc
    out = qcqp_loop(params, a)
    assert out.alloc.is_feasible(integral=True)
    assert out.iterations <= 60
    assert np.all(out.alloc.phi_off <= PHI_MAX)


def test_negated_parametric_objective(params, resource_point):
    # P8 value equals minus the parametric (max) objective built from cost terms
    from daur.model import evaluate_costs

    p, a = params, resource_point
    aux = association_aux(p, a)
    mats = assemble_coefficients(p, a, aux)
    unit = evaluate_costs(p, a.replace(x=np.ones_like(a.x), phi_off=np.ones(p.n_users)))
    local = evaluate_costs(p, a.replace(phi_off=np.zeros(p.n_users)))
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.random(a.x.shape)
        phi = rng.random(p.n_users)
        bil = x * phi[:, None]
        user = aux.alpha_u * (p.c_u * (1 - phi) * p.d - aux.theta_u * (1 - phi) * local.cost_u)
        t_s = bil * (unit.t_ut + unit.t_sp + unit.t_sg) + unit.t_bp + unit.t_sv
        e_s = bil * (unit.e_ut + unit.e_sp + unit.e_sg)
        serv = aux.alpha_s * (p.c_us * bil * p.d[:, None]
                              - aux.theta_s * (p.omega_t * t_s + p.omega_e * e_s))
        p7 = user.sum() + serv.sum()
        assert scalar_objective(mats, x, phi) == pytest.approx(-p7, rel=1e-10, abs=1e-12)


def test_a_without_local_energy_weight(params, resource_point):
    aux = association_aux(params, resource_point)
    aux.theta_u[:] = 0.0
    mats = assemble_coefficients(params, resource_point, aux)
    assert np.allclose(mats.A, aux.alpha_u * params.c_u * params.d, rtol=1e-14)


def test_symmetric_users_share_coefficients():
    from daur.model import ScenarioParams

    p = ScenarioParams(n_users=2, n_servers=2, d=8e6, eta_u=279.62, eta_s=279.62, f_u=1e9,
                       f_s=20e9, p_u=0.2, b_s=10e6, kappa_u=1e-27, kappa_s=1e-27, gain=1e-12,
                       noise_psd=1e-20, block_size=64e6, r_wired=15e6)
    a, _ = initialize(p)
    a.x[:] = 0.5
    mats = assemble_coefficients(p, a, association_aux(p, a))
    assert mats.A[0] == pytest.approx(mats.A[1], rel=1e-14)


def test_row_sum_and_binary_rows(mats):
    prob = build_sdr(mats)
    N, M = mats.n_users, mats.n_servers
    rng = np.random.default_rng(6)
    x = np.zeros((N, M))
    x[np.arange(N), rng.integers(0, M, N)] = 1.0
    S = lift(pack_q(x, rng.uniform(0, PHI_MAX, N)))
    vals = [float(np.sum(A * S)) - b for A, _, b in prob.constraints]
    assert np.allclose(vals[:N * M + N], 0.0, atol=1e-14)
    x_frac = x.copy()
    x_frac[0] = 0.5
    S2 = lift(pack_q(x_frac, rng.uniform(0, PHI_MAX, N)))
    binary = [float(np.sum(A * S2)) - b for A, _, b in prob.constraints[:N * M]]
    assert max(abs(v) for v in binary) > 0.1


def test_extract_examples():
    q = np.array([0.5, 1.0, 0.0])
    assert np.allclose(extract_q(lift(q)), q)
    S = np.eye(4) * 0.3
    S[3, 3] = 1.0
    assert np.allclose(extract_q(S), 0.0)


def test_rounding_examples():
    assert np.array_equal(round_association(np.array([[0.9, 0.1], [0.2, 0.8]])), np.eye(2))
    assert np.allclose(normalize_rows(np.array([[0.5, 1.5]])), [[0.25, 0.75]])


def test_equal_weights_match_brute_force():
    import itertools

    xr = np.full((3, 2), 0.5)
    x = round_association(xr)
    assert sorted(x.sum(axis=0)) == [1, 2]
    best = max(sum(xr[n, m] for n, m in enumerate(c)) for c in itertools.product(range(2), repeat=3)
               if max(np.bincount(c, minlength=2)) <= 2)
    assert np.sum(x * xr) == pytest.approx(best)


def test_one_user_one_server_phi_matches_grid():
    from daur.model import dpe_objective
    from daur.scenario import TopologySpec, generate_scenario

    p = generate_scenario(TopologySpec(n_users=1, n_servers=1, seed=2))
    a, aux = initialize(p)
    a = fp_loop(p, a, aux).alloc
    out = qcqp_loop(p, a)
    assert out.alloc.x[0, 0] == 1.0
    grid = np.linspace(0, PHI_MAX, 1000)
    vals = [dpe_objective(p, a.replace(phi_off=np.array([g]))) for g in grid]
    assert out.alloc.phi_off[0] == pytest.approx(grid[int(np.argmax(vals))], abs=1e-2)
