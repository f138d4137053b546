"""Resource step: optimize (phi_bw, rho, zeta, psi) with x, phi_off, gamma fixed.

The sum-of-ratios auxiliaries (alpha, theta) stay fixed inside this step. The
transmit-energy ratio rho*p*w/r is replaced by its quadratic-transform bound
chi^2*upsilon + 1/(4 r^2 upsilon), which is tight at upsilon = 1/(2 chi r),
and the resulting concave program is handed to :mod:`daur.nlp`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EPS_FLOOR, Allocation, ScenarioParams, evaluate_costs, floored, rate_matrix
from .nlp import ConcaveProgram, NlpResult, maximize

LN2 = np.log(2.0)


@dataclass
class AuxState:
    """Auxiliaries: alpha/theta per user and per pair, upsilon per pair, and
    the binding delay values t_u (per user) and t_s (per pair)."""

    alpha_u: np.ndarray
    alpha_s: np.ndarray
    theta_u: np.ndarray
    theta_s: np.ndarray
    upsilon: np.ndarray
    t_u: np.ndarray
    t_s: np.ndarray

    def copy(self) -> "AuxState":
        return AuxState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})


def update_alpha_theta(params: ScenarioParams, alloc: Allocation) -> AuxState:
    """KKT-point auxiliaries: alpha = 1/cost, theta = numerator/cost.

    When a user offloads everything its local cost is 0; alpha_u is then
    evaluated with (1 - phi) floored at ``EPS_FLOOR`` and theta_u is 0.
    """
    cb = evaluate_costs(params, alloc)
    a = floored(alloc)
    local = 1.0 - a.phi_off
    cost_u = cb.cost_u.copy()
    zero = cost_u <= 0
    if np.any(zero):
        per_bit = (params.omega_t * params.eta_u / (a.psi * params.f_u)
                   + params.omega_e * params.kappa_u * params.eta_u * (a.psi * params.f_u) ** 2)
        cost_u[zero] = (EPS_FLOOR * params.d * per_bit)[zero]
    alpha_u = 1.0 / cost_u
    theta_u = np.where(zero, 0.0, params.c_u * local * params.d * alpha_u)
    alpha_s = 1.0 / cb.cost_s
    theta_s = params.c_us * a.x * (a.phi_off * params.d)[:, None] * alpha_s
    return AuxState(alpha_u=alpha_u, alpha_s=alpha_s, theta_u=theta_u, theta_s=theta_s,
                    upsilon=update_upsilon(params, alloc), t_u=cb.t_up, t_s=cb.t_s)


def _chi(params: ScenarioParams, alloc: Allocation) -> np.ndarray:
    a = floored(alloc)
    return a.x * (a.rho * params.p_u * a.phi_off * params.d)[:, None]


def update_upsilon(params: ScenarioParams, alloc: Allocation) -> np.ndarray:
    """upsilon = 1/(2 chi r) per pair; 0 (unused) where chi = 0."""
    a = floored(alloc)
    chi = _chi(params, alloc)
    r = rate_matrix(params, a.phi_bw, a.rho)
    out = np.zeros_like(chi)
    pos = chi > 0
    out[pos] = 1.0 / (2.0 * chi[pos] * r[pos])
    return out


def transformed_cost(params: ScenarioParams, alloc: Allocation, upsilon: np.ndarray) -> np.ndarray:
    """cost_s with the transmit energy replaced by chi^2 ups + 1/(4 r^2 ups)."""
    cb = evaluate_costs(params, alloc)
    a = floored(alloc)
    chi = _chi(params, alloc)
    r = cb.rate
    qt = np.zeros_like(chi)
    pos = chi > 0
    qt[pos] = chi[pos] ** 2 * upsilon[pos] + 1.0 / (4.0 * r[pos] ** 2 * upsilon[pos])
    return (params.omega_t * cb.t_s
            + params.omega_e * (qt + cb.e_sp + cb.e_sg))


def p3_objective(params: ScenarioParams, alloc: Allocation, aux: AuxState) -> float:
    """Parametric objective with alpha, theta fixed (true costs)."""
    cb = evaluate_costs(params, alloc)
    a = floored(alloc)
    num_u = params.c_u * (1.0 - a.phi_off) * params.d
    num_s = params.c_us * a.x * (a.phi_off * params.d)[:, None]
    return float(np.sum(aux.alpha_u * (num_u - aux.theta_u * cb.cost_u))
                 + np.sum(aux.alpha_s * (num_s - aux.theta_s * cb.cost_s)))


def p5_objective(params: ScenarioParams, alloc: Allocation, aux: AuxState,
                 upsilon: np.ndarray | None = None) -> float:
    """Parametric objective with the quadratic-transform transmit energy."""
    ups = aux.upsilon if upsilon is None else upsilon
    cb = evaluate_costs(params, alloc)
    a = floored(alloc)
    num_u = params.c_u * (1.0 - a.phi_off) * params.d
    num_s = params.c_us * a.x * (a.phi_off * params.d)[:, None]
    active = aux.theta_s > 0
    cost_s = np.where(active, transformed_cost(params, alloc, ups), cb.cost_s)
    return float(np.sum(aux.alpha_u * (num_u - aux.theta_u * cb.cost_u))
                 + np.sum(aux.alpha_s * (num_s - aux.theta_s * cost_s)))


def weighted_cost(params: ScenarioParams, alloc: Allocation, aux: AuxState,
                  upsilon: np.ndarray | None = None) -> float:
    """sum alpha*theta*cost; the resource-dependent part of -V_P5."""
    ups = aux.upsilon if upsilon is None else upsilon
    cb = evaluate_costs(params, alloc)
    active = aux.theta_s > 0
    cost_s = np.where(active, transformed_cost(params, alloc, ups), cb.cost_s)
    return float(np.sum(aux.alpha_u * aux.theta_u * cb.cost_u)
                 + np.sum(aux.alpha_s * aux.theta_s * cost_s))


# --------------------------------------------------------------------------
# P5 as a concave program over the active variables


def rate_derivatives(params: ScenarioParams, n, m, phi_bw, rho):
    """Rate and its first/second partials w.r.t. (phi_bw, rho), vectorised over pairs."""
    a = params.gain[n, m] * params.p_u[n] / (params.noise_psd * params.b_s[m])
    K = params.b_s[m] / LN2
    u = a * rho / phi_bw
    lg = np.log1p(u)
    r = K * phi_bw * lg
    small = u < 1e-4
    diff = np.where(small, u ** 2 / 2 - 2 * u ** 3 / 3 + 3 * u ** 4 / 4, lg - u / (1.0 + u))
    dr_dphi = K * diff
    dr_drho = K * a / (1.0 + u)
    den = phi_bw * (1.0 + u) ** 2
    d2_pp = -K * u ** 2 / den
    d2_rr = -K * a ** 2 / den
    d2_pr = K * a * u / den
    return r, dr_dphi, dr_drho, d2_pp, d2_rr, d2_pr


@dataclass
class P5Layout:
    """Index map from the P5 decision vector to allocation entries."""

    users_psi: np.ndarray
    users_rho: np.ndarray
    pair_n: np.ndarray
    pair_m: np.ndarray

    @property
    def dim(self):
        return self.users_psi.size + self.users_rho.size + 2 * self.pair_n.size

    def slices(self):
        a = self.users_psi.size
        b = a + self.users_rho.size
        c = b + self.pair_n.size
        return slice(0, a), slice(a, b), slice(b, c), slice(c, c + self.pair_n.size)


@dataclass
class P5Program:
    params: ScenarioParams
    alloc: Allocation
    aux: AuxState
    layout: P5Layout
    program: ConcaveProgram
    rho_pos: np.ndarray  # position of each pair's user inside the rho block

    def to_alloc(self, v) -> Allocation:
        L = self.layout
        s_psi, s_rho, s_bw, s_z = L.slices()
        out = self.alloc.copy()
        out.psi[L.users_psi] = v[s_psi]
        out.rho[L.users_rho] = v[s_rho]
        out.phi_bw[L.pair_n, L.pair_m] = v[s_bw]
        out.zeta[L.pair_n, L.pair_m] = v[s_z]
        return out


def build_p5(params: ScenarioParams, alloc: Allocation, aux: AuxState) -> P5Program:
    """Assemble P5 as a :class:`ConcaveProgram`.

    Pairs with theta_s = 0 are left out. Connected but idle pairs (x > 0 and
    phi_off = 0) are parked at ``EPS_FLOOR`` so they hold no capacity;
    unconnected pairs keep their current values, which feed the validation delay.
    """
    p = params
    alloc = alloc.copy()
    idle = (alloc.x > 0) & (aux.theta_s <= 0)
    alloc.phi_bw[idle] = EPS_FLOOR
    alloc.zeta[idle] = EPS_FLOOR
    a = floored(alloc)

    pn, pm = np.nonzero(aux.theta_s > 0)
    users_psi = np.flatnonzero(aux.theta_u > 0)
    users_rho = np.unique(pn)
    layout = P5Layout(users_psi, users_rho, pn, pm)
    rho_pos = np.searchsorted(users_rho, pn)
    s_psi, s_rho, s_bw, s_z = layout.slices()
    D = layout.dim

    # per-user constants
    Wu = (aux.alpha_u * aux.theta_u)[users_psi]
    Lu = ((1.0 - a.phi_off) * p.d * p.eta_u)[users_psi]
    fu = p.f_u[users_psi]
    cu1 = p.omega_t * Lu / fu
    cu2 = p.omega_e * p.kappa_u[users_psi] * Lu * fu ** 2

    # per-pair constants
    Ws = (aux.alpha_s * aux.theta_s)[pn, pm]
    w = a.x[pn, pm] * a.phi_off[pn] * p.d[pn]
    ups = aux.upsilon[pn, pm]
    pw = p.p_u[pn] * w
    g = a.gamma[pn, pm]
    fs = p.f_s[pm]
    beta = p.bgen_cycles[pm]
    k1 = p.eta_s[pm] / (g * fs) + beta / ((1.0 - g) * fs)
    k2 = p.kappa_s[pm] * fs ** 2 * (p.eta_s[pm] * g ** 2 + beta * (1.0 - g) ** 2)
    cb = evaluate_costs(p, alloc)
    const = p.omega_t * (cb.t_bp + cb.t_sv)[pn, pm]
    wt, we = p.omega_t, p.omega_e

    def split(v):
        return v[s_psi], v[s_rho][rho_pos], v[s_bw], v[s_z]

    def parts(v):
        psi, rho, bw, z = split(v)
        r, rp, rr, rpp, rrr, rpr = rate_derivatives(p, pn, pm, bw, rho)
        cost_u = cu1 / psi + cu2 * psi ** 2
        h = wt * w / r + we / (4 * r ** 2 * ups)
        q = we * ups * pw ** 2 * rho ** 2
        zz = wt * w * k1 / z + we * w * k2 * z ** 2
        return psi, rho, bw, z, r, (rp, rr, rpp, rrr, rpr), cost_u, h + q + zz + const

    def objective(v):
        psi, rho, bw, z, r, (rp, rr, _, _, _), cost_u, cost_s = parts(v)
        val = -np.sum(Wu * cost_u) - np.sum(Ws * cost_s)
        grad = np.zeros(D)
        grad[s_psi] = -Wu * (-cu1 / psi ** 2 + 2 * cu2 * psi)
        h1 = -wt * w / r ** 2 - we / (2 * r ** 3 * ups)
        g_bw = h1 * rp
        g_rho = h1 * rr + 2 * we * ups * pw ** 2 * rho
        g_z = -wt * w * k1 / z ** 2 + 2 * we * w * k2 * z
        grad[s_bw] = -Ws * g_bw
        grad[s_z] = -Ws * g_z
        np.add.at(grad, s_rho.start + rho_pos, -Ws * g_rho)
        return val, grad

    def hessian(v):
        psi, rho, bw, z, r, (rp, rr, rpp, rrr, rpr), _, _ = parts(v)
        H = np.zeros((D, D))
        iu = np.arange(s_psi.start, s_psi.stop)
        H[iu, iu] = -Wu * (2 * cu1 / psi ** 3 + 2 * cu2)
        h1 = -wt * w / r ** 2 - we / (2 * r ** 3 * ups)
        h2 = 2 * wt * w / r ** 3 + 3 * we / (2 * r ** 4 * ups)
        hbb = h2 * rp ** 2 + h1 * rpp
        hrr = h2 * rr ** 2 + h1 * rrr + 2 * we * ups * pw ** 2
        hbr = h2 * rp * rr + h1 * rpr
        hzz = 2 * wt * w * k1 / z ** 3 + 2 * we * w * k2
        ib = s_bw.start + np.arange(pn.size)
        iz = s_z.start + np.arange(pn.size)
        ir = s_rho.start + rho_pos
        H[ib, ib] = -Ws * hbb
        H[iz, iz] = -Ws * hzz
        np.add.at(H, (ir, ir), -Ws * hrr)
        np.add.at(H, (ib, ir), -Ws * hbr)
        np.add.at(H, (ir, ib), -Ws * hbr)
        return H

    # coupling rows per server over the active pairs
    rows, rhs = [], []
    for m in range(p.n_servers):
        sel = pm == m
        if not np.any(sel):
            continue
        others = (a.x[:, m] > 0).copy()
        others[pn[sel]] = False
        for var_slice, arr in ((s_bw, alloc.phi_bw), (s_z, alloc.zeta)):
            row = np.zeros(D)
            row[var_slice.start + np.flatnonzero(sel)] = a.x[pn[sel], m]
            rows.append(row)
            rhs.append(1.0 - float(np.sum(a.x[others, m] * np.maximum(arr[others, m], EPS_FLOOR))))
    A_ub = np.array(rows) if rows else None
    b_ub = np.array(rhs) if rows else None

    v0 = np.concatenate([a.psi[users_psi], a.rho[users_rho], a.phi_bw[pn, pm], a.zeta[pn, pm]])
    lb, ub = EPS_FLOOR, 1.0
    v0 = np.clip(v0, 2 * lb, ub - 1e-7)
    if rows:
        # shrink capacity shares that sit on or over their budget
        for row, bound in zip(A_ub, b_ub):
            idx = np.flatnonzero(row)
            tot = row[idx] @ v0[idx]
            target = bound * (1.0 - 1e-6)
            if tot >= target:
                v0[idx] = np.maximum(v0[idx] * target / tot, 1.5 * lb)
    prog = ConcaveProgram(dim=D, objective=objective, hessian=hessian, x0=v0, lb=lb, ub=ub,
                          A_ub=A_ub, b_ub=b_ub)
    return P5Program(params=p, alloc=alloc, aux=aux, layout=layout, program=prog, rho_pos=rho_pos)


@dataclass
class P5Result:
    alloc: Allocation
    value: float
    start_value: float
    status: str
    nlp: NlpResult | None = None


def solve_p5(params: ScenarioParams, alloc: Allocation, aux: AuxState, tol: float = 1e-9) -> P5Result:
    """One concave P5 solve with ``aux.upsilon`` fixed; returns improved resources."""
    start_value = p5_objective(params, alloc, aux)
    built = build_p5(params, alloc, aux)
    if built.layout.dim == 0:
        return P5Result(alloc=alloc.copy(), value=start_value, start_value=start_value, status="optimal")
    res = maximize(built.program, tol=tol)
    new = built.to_alloc(res.x)
    value = p5_objective(params, new, aux)
    if value < start_value:
        return P5Result(alloc=alloc.copy(), value=start_value, start_value=start_value,
                        status=res.status, nlp=res)
    return P5Result(alloc=new, value=value, start_value=start_value, status=res.status, nlp=res)


@dataclass
class FpResult:
    alloc: Allocation
    aux: AuxState
    iterations: int
    values: list = field(default_factory=list)  # V_P5 after each solve, start first
    status: str = "converged"


def fp_loop(params: ScenarioParams, alloc: Allocation, aux: AuxState, eps1: float = 1e-3,
            max_iter: int = 100, tol: float = 1e-9) -> FpResult:
    """Alternate upsilon updates and P5 solves with alpha, theta fixed.

    Stops when the weighted cost (the resource-dependent part of V_P5)
    improves by a relative amount of at most ``eps1``.
    """
    if eps1 <= 0:
        raise ValueError("eps1 must be positive")
    aux = aux.copy()
    cur = alloc.copy()
    aux.upsilon = update_upsilon(params, cur)
    values = [p5_objective(params, cur, aux)]
    w_prev = weighted_cost(params, cur, aux)
    status = "max_iter"
    flagged = None
    it = 0
    for it in range(1, max_iter + 1):
        res = solve_p5(params, cur, aux, tol=tol)
        if res.status != "optimal":
            flagged = res.status
        cur = res.alloc
        values.append(res.value)
        aux.upsilon = update_upsilon(params, cur)
        w_new = weighted_cost(params, cur, aux)
        if w_prev <= 0 or (w_prev - w_new) / w_prev <= eps1:
            status = "converged"
            break
        w_prev = w_new
    if flagged and status == "converged":
        status = f"converged ({flagged} inner solve)"
    return FpResult(alloc=cur, aux=aux, iterations=it, values=values, status=status)
