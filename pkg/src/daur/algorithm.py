"""Outer alternating loop and the four reference baselines."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .assoc import PHI_MAX, qcqp_loop
from .fp import AuxState, fp_loop, update_alpha_theta
from .model import Allocation, ScenarioParams, dpe_objective

BASELINES = ("RUCAA", "GUCAA", "AAUCO", "GUCRO")


def round_robin(n_users: int, n_servers: int) -> np.ndarray:
    x = np.zeros((n_users, n_servers))
    x[np.arange(n_users), np.arange(n_users) % n_servers] = 1.0
    return x


def initialize(params: ScenarioParams) -> tuple[Allocation, AuxState]:
    """Starting point: round-robin association, half offload, 1/N shares."""
    N, M = params.n_users, params.n_servers
    alloc = Allocation(
        x=round_robin(N, M),
        phi_off=np.full(N, 0.5),
        gamma=np.full((N, M), 0.5),
        phi_bw=np.full((N, M), 1.0 / N),
        rho=np.ones(N),
        zeta=np.full((N, M), 1.0 / N),
        psi=np.ones(N),
    )
    return alloc, update_alpha_theta(params, alloc)


@dataclass
class IterationTrace:
    """Rows of (outer iteration, phase, inner iterations, objective, wall seconds)."""

    rows: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter)

    def add(self, outer: int, phase: str, inner: int, objective: float):
        self.rows.append((outer, phase, inner, float(objective), time.perf_counter() - self._t0))

    def to_csv(self, path, method: str | None = None):
        with open(path, "w", newline="") as fh:
            self.write(fh, method=method, header=True)

    def write(self, fh, method: str | None = None, header: bool = True):
        w = csv.writer(fh, lineterminator="\n")
        cols = ["iteration", "phase", "inner_iterations", "objective", "wall_time_s"]
        if header:
            w.writerow((["method"] if method else []) + cols)
        for it, phase, inner, obj, wall in self.rows:
            row = [it, phase, inner, f"{obj:.17g}", f"{wall:.6f}"]
            w.writerow(([method] if method else []) + row)


@dataclass
class DaurResult:
    alloc: Allocation
    dpe: float
    trace: IterationTrace
    outer_iterations: int
    fp_iterations: list
    qcqp_iterations: list
    status: str
    fp_values: list = field(default_factory=list)


def run_daur(params: ScenarioParams, eps1: float = 1e-3, eps2: float = 1e-3, eps3: float = 1e-3,
             max_outer: int = 20, max_fp: int = 100, max_qcqp: int = 60,
             max_seconds: float | None = None, phi_max: float = PHI_MAX,
             rounding: str = "hungarian") -> DaurResult:
    """Alternate the resource step and the association step until DPE settles.

    The monitored objective is the best feasible DPE seen so far; the loop
    stops when one outer round raises it by a relative amount of at most
    ``eps3``. A new association therefore always gets one resource pass
    before it is judged. The best iterate is returned, DPE recomputed.
    """
    for eps in (eps1, eps2, eps3):
        if eps <= 0:
            raise ValueError("tolerances must be positive")
    t0 = time.perf_counter()
    trace = IterationTrace()
    cur, aux = initialize(params)
    v_old = dpe_objective(params, cur)
    trace.add(0, "init", 0, v_old)
    trace.add(0, "best", 0, v_old)
    best, best_v = cur.copy(), v_old
    fp_its, q_its, fp_vals = [], [], []
    status = "max_outer"
    flags = []
    i = 0

    def consider(alloc):
        nonlocal best, best_v
        if alloc.is_feasible(integral=True, tol=1e-9):
            v = dpe_objective(params, alloc)
            if v > best_v:
                best, best_v = alloc.copy(), v

    for i in range(1, max_outer + 1):
        fp = fp_loop(params, cur, aux, eps1=eps1, max_iter=max_fp)
        fp_its.append(fp.iterations)
        fp_vals.append(fp.values)
        if fp.status != "converged":
            flags.append(f"fp:{fp.status}")
        cur = fp.alloc
        trace.add(i, "fp", fp.iterations, dpe_objective(params, cur))
        consider(cur)

        q = qcqp_loop(params, cur, eps2=eps2, max_iter=max_qcqp, phi_max=phi_max, rounding=rounding)
        q_its.append(q.iterations)
        if q.status != "converged":
            flags.append(f"qcqp:{q.status}")
        trace.add(i, "qcqp_sdr", q.iterations, q.values[-1] if q.values else np.nan)
        relaxed = q.alloc.replace(x=q.x_relaxed, phi_off=np.clip(q.phi_relaxed, 0.0, phi_max))
        trace.add(i, "pre_round", q.iterations, dpe_objective(params, relaxed))
        cur = q.alloc
        v_new = dpe_objective(params, cur)
        trace.add(i, "post_round", q.iterations, v_new)
        consider(cur)
        trace.add(i, "best", 0, best_v)

        aux = update_alpha_theta(params, cur)
        if (best_v - v_old) / v_old <= eps3:
            status = "converged"
            break
        v_old = best_v
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            status = "time_limit"
            break

    if flags and status == "converged":
        status = "converged (flagged: " + ", ".join(sorted(set(flags))) + ")"
    final = dpe_objective(params, best)
    trace.add(i, "final", 0, final)
    return DaurResult(alloc=best, dpe=final, trace=trace, outer_iterations=i,
                      fp_iterations=fp_its, qcqp_iterations=q_its, status=status, fp_values=fp_vals)


# --------------------------------------------------------------------------
# baselines


def average_allocation(params: ScenarioParams, x: np.ndarray) -> Allocation:
    """Half offload, gamma 1/2, full power and CPU, shares 1/(server load)."""
    N, M = params.n_users, params.n_servers
    load = x.sum(axis=0)
    share = np.where(x > 0, 1.0 / np.maximum(load, 1.0)[None, :], 1.0 / N)
    return Allocation(x=x.copy(), phi_off=np.full(N, 0.5), gamma=np.full((N, M), 0.5),
                      phi_bw=share.copy(), rho=np.ones(N), zeta=share.copy(), psi=np.ones(N))


def greedy_association(params: ScenarioParams) -> np.ndarray:
    x = np.zeros((params.n_users, params.n_servers))
    x[np.arange(params.n_users), np.argmax(params.gain, axis=1)] = 1.0
    return x


def random_association(params: ScenarioParams, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(10,))))
    x = np.zeros((params.n_users, params.n_servers))
    x[np.arange(params.n_users), rng.integers(0, params.n_servers, params.n_users)] = 1.0
    return x


@dataclass
class BaselineResult:
    kind: str
    alloc: Allocation
    dpe: float
    iterations: int = 0
    status: str = "ok"


def run_baseline(kind: str, params: ScenarioParams, seed: int = 0, eps1: float = 1e-3,
                 eps2: float = 1e-3, eps3: float = 1e-3, max_outer: int = 20, max_fp: int = 100,
                 max_qcqp: int = 60, phi_max: float = PHI_MAX,
                 rounding: str = "hungarian") -> BaselineResult:
    """Evaluate one of RUCAA, GUCAA, AAUCO, GUCRO."""
    kind = kind.upper()
    if kind == "RUCAA":
        alloc = average_allocation(params, random_association(params, seed))
        return BaselineResult(kind, alloc, dpe_objective(params, alloc))
    if kind == "GUCAA":
        alloc = average_allocation(params, greedy_association(params))
        return BaselineResult(kind, alloc, dpe_objective(params, alloc))
    if kind == "AAUCO":
        start = average_allocation(params, round_robin(params.n_users, params.n_servers))
        q = qcqp_loop(params, start, eps2=eps2, max_iter=max_qcqp, phi_max=phi_max, rounding=rounding)
        alloc = average_allocation(params, q.alloc.x)
        alloc.phi_off = q.alloc.phi_off.copy()
        status = "ok" if q.status == "converged" else q.status
        return BaselineResult(kind, alloc, dpe_objective(params, alloc), q.iterations, status)
    if kind == "GUCRO":
        cur = average_allocation(params, greedy_association(params))
        v_old = dpe_objective(params, cur)
        best, best_v = cur.copy(), v_old
        status, its = "max_outer", 0
        for its in range(1, max_outer + 1):
            fp = fp_loop(params, cur, update_alpha_theta(params, cur), eps1=eps1, max_iter=max_fp)
            cur = fp.alloc
            v_new = dpe_objective(params, cur)
            if v_new > best_v:
                best, best_v = cur.copy(), v_new
            if (v_new - v_old) / v_old <= eps3:
                status = "ok"
                break
            v_old = v_new
        return BaselineResult(kind, best, dpe_objective(params, best), its, status)
    raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
