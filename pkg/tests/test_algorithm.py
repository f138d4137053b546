import numpy as np
import pytest

from daur.algorithm import (BASELINES, average_allocation, greedy_association, initialize,
                            random_association, round_robin, run_baseline, run_daur)
from daur.fp import update_alpha_theta
from daur.model import dpe_objective
from daur.scenario import TopologySpec, generate_scenario


@pytest.fixture(scope="module")
def daur(params):
    return run_daur(params)


def test_round_robin():
    x = round_robin(5, 2)
    assert np.array_equal(np.argmax(x, axis=1), [0, 1, 0, 1, 0])


def test_initialize_feasible_and_symmetric():
    p = generate_scenario(TopologySpec(n_users=4, n_servers=2, seed=0),
                          {"task_bytes_min": 1e6, "task_bytes_max": 1e6})
    a, aux = initialize(p)
    assert a.is_feasible()
    p_same = p.replace(d=np.full(4, p.d[0]))
    _, aux2 = initialize(p_same)
    assert np.allclose(aux2.alpha_u, aux2.alpha_u[0])


def test_daur_result(params, daur):
    assert daur.alloc.is_feasible(integral=True)
    assert daur.dpe == pytest.approx(dpe_objective(params, daur.alloc))
    init, _ = initialize(params)
    assert daur.dpe >= dpe_objective(params, init)
    assert daur.status.startswith("converged")


def test_trace_best_is_nondecreasing(daur):
    best = [obj for _, phase, _, obj, _ in daur.trace.rows if phase == "best"]
    assert np.all(np.diff(best) >= 0)
    phases = {r[1] for r in daur.trace.rows}
    assert {"init", "fp", "qcqp_sdr", "pre_round", "post_round", "final"} <= phases


def test_trace_csv(tmp_path, daur):
    path = tmp_path / "t.csv"
    daur.trace.to_csv(path, method="DAUR")
    lines = path.read_text().splitlines()
    assert lines[0].startswith("method,iteration,phase")
    assert len(lines) == len(daur.trace.rows) + 1


def test_daur_deterministic(params, daur):
    again = run_daur(params)
    assert again.dpe == daur.dpe
    assert np.array_equal(again.alloc.x, daur.alloc.x)


def test_bad_tolerance(params):
    with pytest.raises(ValueError):
        run_daur(params, eps3=0.0)


def test_average_allocation_shares(params):
    x = greedy_association(params)
    a = average_allocation(params, x)
    load = x.sum(axis=0)
    for m in range(params.n_servers):
        if load[m]:
            assert np.allclose(a.phi_bw[x[:, m] > 0, m], 1 / load[m])
    assert a.is_feasible()


def test_random_association_seeded(params):
    assert np.array_equal(random_association(params, 3), random_association(params, 3))
    assert random_association(params, 3).sum() == params.n_users


@pytest.mark.parametrize("kind", BASELINES)
def test_baselines_feasible(params, kind):
    res = run_baseline(kind, params, seed=0)
    assert res.alloc.is_feasible(integral=True)
    assert res.dpe == pytest.approx(dpe_objective(params, res.alloc))


def test_unknown_baseline(params):
    with pytest.raises(ValueError):
        run_baseline("XYZ", params)


def test_gucro_not_below_gucaa(params):
    assert run_baseline("GUCRO", params).dpe >= run_baseline("GUCAA", params).dpe


def test_two_by_two_initial_identity():
    assert np.array_equal(round_robin(2, 2), np.eye(2))


def test_one_server_greedy_equals_random():
    p = generate_scenario(TopologySpec(n_users=4, n_servers=1, seed=0))
    assert run_baseline("GUCAA", p).dpe == run_baseline("RUCAA", p, seed=5).dpe


def test_rucaa_repeatable(params):
    assert run_baseline("RUCAA", params, seed=2).dpe == run_baseline("RUCAA", params, seed=2).dpe
