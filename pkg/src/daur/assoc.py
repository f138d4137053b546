"""Association step: optimize (x, phi_off) with the resources fixed.

The bilinear program in Q = (phi_1..phi_N, x_{.,1}, .., x_{.,M}) is lifted to
S = (Q, 1)(Q, 1)^T, relaxed to an SDP, solved with :mod:`daur.sdp`, and the
relaxed association is rounded by a capacity-slot assignment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .fp import AuxState, update_alpha_theta, update_upsilon
from .model import EPS_FLOOR, Allocation, ScenarioParams, evaluate_costs, floored
from .sdp import SdpProblem, SdpResult, solve_sdp

PHI_MAX = 1.0 - 1e-3


def x_index(n_users: int, n: int, m: int) -> int:
    """Position of x_{n,m} inside Q."""
    return n_users + m * n_users + n


def pack_q(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.concatenate([phi, x.T.reshape(-1)])


def unpack_q(q: np.ndarray, n_users: int, n_servers: int):
    phi = q[:n_users].copy()
    x = q[n_users:].reshape(n_servers, n_users).T.copy()
    return x, phi


def association_aux(params: ScenarioParams, alloc: Allocation) -> AuxState:
    """Auxiliaries for the association step.

    User terms are the usual KKT values. Server terms are evaluated as if
    every pair were connected (x = 1), so an unconnected pair is priced by
    what it would cost instead of by a zero weight.
    """
    aux = update_alpha_theta(params, alloc)
    full = alloc.replace(x=np.ones_like(alloc.x))
    cb = evaluate_costs(params, full)
    aux.alpha_s = 1.0 / cb.cost_s
    aux.theta_s = params.c_us * (floored(full).phi_off * params.d)[:, None] * aux.alpha_s
    aux.t_s = cb.t_s
    aux.upsilon = update_upsilon(params, full)
    return aux


def set_gamma_optimal(alloc: Allocation, omega_b: float = 1.0) -> Allocation:
    """Set every gamma to the delay-optimal split 1/(1 + omega_b).

    The energy-optimal split is omega_b/(1 + omega_b); both are 1/2 at
    omega_b = 1. For other omega_b the delay form is used and a warning issued.
    """
    if omega_b != 1.0:
        warnings.warn(f"omega_b={omega_b}: delay- and energy-optimal gamma differ; "
                      "using the delay form 1/(1+omega_b)", RuntimeWarning, stacklevel=2)
    return alloc.replace(gamma=np.full_like(alloc.gamma, 1.0 / (1.0 + omega_b)))


@dataclass
class QcqpMatrices:
    """Coefficients of the association QCQP (minimization form).

    ``A`` per user, ``B`` and ``d_ts`` per pair, ``w_ts`` the delay weights
    alpha_s*theta_s*omega_t. ``P0``, ``W0``, ``p2_tu``, ``P0_ts`` live on Q;
    ``p1_tu`` and ``p1_ts`` are constants.
    """

    n_users: int
    n_servers: int
    A: np.ndarray
    B: np.ndarray
    C: float
    P0: np.ndarray
    W0: np.ndarray
    p2_tu: np.ndarray
    p1_tu: float
    P0_ts: np.ndarray
    p1_ts: float
    d_ts: np.ndarray
    w_ts: np.ndarray
    phi_bw: np.ndarray
    zeta: np.ndarray
    phi_max: float = PHI_MAX

    @property
    def q_len(self) -> int:
        return self.n_users * (1 + self.n_servers)

    @property
    def dim(self) -> int:
        return self.q_len + 1

    def value(self, q: np.ndarray) -> float:
        """Quadratic-form objective at ``q`` (matrix evaluation)."""
        return float(q @ (self.P0 + self.P0_ts) @ q + (self.W0 + self.p2_tu) @ q
                     + self.C + self.p1_tu + self.p1_ts)

    def lifted_cost(self) -> np.ndarray:
        L = self.q_len
        P = np.zeros((L + 1, L + 1))
        P[:L, :L] = self.P0 + self.P0_ts
        P[:L, L] = P[L, :L] = 0.5 * (self.W0 + self.p2_tu)
        P[L, L] = self.C + self.p1_tu + self.p1_ts
        return P


def scalar_objective(mats: QcqpMatrices, x: np.ndarray, phi: np.ndarray) -> float:
    """Association objective written out as sums (no matrices)."""
    bil = x * phi[:, None]
    return float(mats.C + mats.p1_tu + mats.p1_ts + np.sum(mats.p2_tu[:mats.n_users] * phi)
                 + np.sum(mats.A * phi) + np.sum(mats.B * bil) + np.sum(mats.w_ts * mats.d_ts * bil))


def assemble_coefficients(params: ScenarioParams, alloc: Allocation, aux: AuxState,
                          phi_max: float = PHI_MAX) -> QcqpMatrices:
    """Build A, B, C and the delay terms from fixed resources and auxiliaries."""
    p = params
    a = floored(alloc)
    N, M = p.n_users, p.n_servers
    au, tu = aux.alpha_u, aux.theta_u
    as_, ts = aux.alpha_s, aux.theta_s
    cpu_u = a.psi * p.f_u
    A = au * p.c_u * p.d - au * tu * p.omega_e * p.kappa_u * p.d * p.eta_u * cpu_u ** 2
    C = -float(A.sum())

    cb = evaluate_costs(p, alloc)
    r = cb.rate
    g = a.gamma
    fs = p.f_s[None, :]
    beta = p.bgen_cycles[None, :]
    eta = p.eta_s[None, :]
    dn = p.d[:, None]
    mix = eta * g ** 2 + beta * (1 - g) ** 2
    B = (as_ * ts * p.omega_e * (a.rho * p.p_u)[:, None] * dn / r
         + as_ * ts * p.omega_e * p.kappa_s[None, :] * dn * mix * a.zeta ** 2 * fs ** 2
         - as_ * p.c_us * dn)
    d_ts = dn / r + dn * eta / (g * a.zeta * fs) + dn * beta / ((1 - g) * a.zeta * fs)
    w_ts = as_ * ts * p.omega_t

    L = N + N * M
    P0 = np.zeros((L, L))
    P0_ts = np.zeros((L, L))
    for m in range(M):
        for n in range(N):
            k = x_index(N, n, m)
            P0[n, k] = P0[k, n] = 0.5 * B[n, m]
            P0_ts[n, k] = P0_ts[k, n] = 0.5 * w_ts[n, m] * d_ts[n, m]
    W0 = np.zeros(L)
    W0[:N] = A
    t_u_per_phi = au * tu * p.omega_t * p.d * p.eta_u / cpu_u
    p2_tu = np.zeros(L)
    p2_tu[:N] = -t_u_per_phi
    p1_tu = float(t_u_per_phi.sum())
    p1_ts = float(np.sum(w_ts * (cb.t_bp + cb.t_sv)))
    return QcqpMatrices(n_users=N, n_servers=M, A=A, B=B, C=C, P0=P0, W0=W0, p2_tu=p2_tu,
                        p1_tu=p1_tu, P0_ts=P0_ts, p1_ts=p1_ts, d_ts=d_ts, w_ts=w_ts,
                        phi_bw=alloc.phi_bw.copy(), zeta=alloc.zeta.copy(), phi_max=phi_max)


def _sym_unit(D, i, j):
    E = np.zeros((D, D))
    E[i, j] += 0.5
    E[j, i] += 0.5
    return E


def build_sdr(mats: QcqpMatrices) -> SdpProblem:
    """Lift the QCQP to an SDP over S of size (N + NM + 1)^2.

    Constraint order: binary lifts (NM), row sums (N), phi upper bounds (N),
    phi lower bounds (N), phi^2 <= phi_max*phi cuts (N), bandwidth and CPU
    couplings (M each), homogenization S_LL = 1.
    """
    N, M = mats.n_users, mats.n_servers
    L = mats.q_len
    D = L + 1
    prob = SdpProblem(mats.lifted_cost())
    for m in range(M):
        for n in range(N):
            k = x_index(N, n, m)
            P = np.zeros((D, D))
            P[k, k] = 1.0
            P[k, L] = P[L, k] = -0.5
            prob.add(P, "eq", 0.0)
    for n in range(N):
        P = np.zeros((D, D))
        for m in range(M):
            k = x_index(N, n, m)
            P[k, L] = P[L, k] = 0.5
        P[L, L] = -1.0
        prob.add(P, "eq", 0.0)
    for n in range(N):
        P = _sym_unit(D, n, L)
        P[L, L] = -mats.phi_max
        prob.add(P, "le", 0.0)
    for n in range(N):
        prob.add(-_sym_unit(D, n, L), "le", 0.0)
    for n in range(N):
        P = np.zeros((D, D))
        P[n, n] = 1.0
        P[n, L] = P[L, n] = -0.5 * mats.phi_max
        prob.add(P, "le", 0.0)
    for share in (mats.phi_bw, mats.zeta):
        for m in range(M):
            P = np.zeros((D, D))
            for n in range(N):
                k = x_index(N, n, m)
                P[k, L] = P[L, k] = 0.5 * share[n, m]
            P[L, L] = -1.0
            prob.add(P, "le", 0.0)
    E = np.zeros((D, D))
    E[L, L] = 1.0
    prob.add(E, "eq", 1.0)
    return prob


def lift(q: np.ndarray) -> np.ndarray:
    v = np.append(q, 1.0)
    return np.outer(v, v)


def extract_q(S: np.ndarray, mats: QcqpMatrices | None = None, clamp_tol: float = 0.05) -> np.ndarray:
    """Recover Q from the lifted matrix.

    Uses the last column over the bottom-right entry, clamped to the boxes. If
    clamping moves an entry by more than ``clamp_tol`` and ``mats`` is given,
    the leading-eigenvector estimate is also tried and the better one kept.
    """
    S = np.asarray(S, dtype=float)
    S = 0.5 * (S + S.T)
    ev = np.linalg.eigvalsh(S)
    if ev[0] < -1e-6 * max(1.0, ev[-1]):
        raise ValueError("S is not positive semidefinite")
    L = S.shape[0] - 1
    if S[L, L] <= 0:
        raise ValueError("bottom-right entry of S must be positive")
    phi_max = mats.phi_max if mats is not None else 1.0
    n_users = mats.n_users if mats is not None else None

    def clamp(q):
        out = np.clip(q, 0.0, 1.0)
        if n_users is not None:
            out[:n_users] = np.minimum(out[:n_users], phi_max)
        return out

    raw = S[:L, L] / S[L, L]
    q = clamp(raw)
    if mats is None or np.max(np.abs(q - raw)) <= clamp_tol:
        return q
    w, V = np.linalg.eigh(S)
    v = V[:, -1]
    if abs(v[L]) > 1e-12:
        alt = clamp(v[:L] / v[L])
        if mats.value(alt) < mats.value(q):
            return alt
    return q


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Divide every row whose sum exceeds 1 by that sum."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    s = x.sum(axis=1, keepdims=True)
    return np.where(s > 1.0, x / np.where(s > 0, s, 1.0), x)


def round_association(x_relaxed: np.ndarray, method: str = "hungarian") -> np.ndarray:
    """Round a relaxed association to one server per user.

    ``hungarian``: each server gets ceil(N/M) slots and a maximum-weight
    assignment of users to slots is taken. ``argmax``: per-row argmax.
    """
    xr = normalize_rows(x_relaxed)
    N, M = xr.shape
    out = np.zeros((N, M))
    if method == "argmax":
        out[np.arange(N), np.argmax(xr, axis=1)] = 1.0
        return out
    if method != "hungarian":
        raise ValueError(f"unknown rounding method {method!r}")
    cap = math.ceil(N / M)
    weights = np.repeat(xr, cap, axis=1)  # column j is a slot of server j // cap
    rows, cols = linear_sum_assignment(weights, maximize=True)
    out[rows, cols // cap] = 1.0
    return out


def rescale_shares(alloc: Allocation) -> Allocation:
    """Scale each server's phi_bw and zeta columns so the couplings hold."""
    out = alloc.copy()
    for arr in (out.phi_bw, out.zeta):
        load = (out.x * arr).sum(axis=0)
        for m in np.flatnonzero(load > 1.0):
            conn = out.x[:, m] > 0
            arr[conn, m] /= load[m] * (1.0 + 1e-12)
    return out


@dataclass
class QcqpResult:
    alloc: Allocation
    x_relaxed: np.ndarray
    phi_relaxed: np.ndarray
    iterations: int
    values: list = field(default_factory=list)
    status: str = "converged"
    sdp: SdpResult | None = None


def solve_association_sdr(params: ScenarioParams, alloc: Allocation, phi_max: float = PHI_MAX,
                          tol: float = 1e-8):
    """One assemble -> lift -> solve -> extract pass; returns (q, mats, sdp result)."""
    aux = association_aux(params, alloc)
    mats = assemble_coefficients(params, alloc, aux, phi_max=phi_max)
    res = solve_sdp(build_sdr(mats), tol=tol)
    q = extract_q(res.S, mats)
    return q, mats, res


def qcqp_loop(params: ScenarioParams, alloc: Allocation, eps2: float = 1e-3, max_iter: int = 60,
              phi_max: float = PHI_MAX, rounding: str = "hungarian", tol: float = 1e-8) -> QcqpResult:
    """Repeat the SDR pass until its optimal value settles, then round.

    Settled means a relative value change of at most ``eps2``, a relaxed Q
    that moves by at most ``eps2``, or a period-2 cycle of both.

    The coefficients are rebuilt from the latest relaxed (x, phi_off) on each
    pass. After rounding, phi_off is clamped and the capacity shares are
    rescaled so the couplings hold under the new association.
    """
    if eps2 <= 0:
        raise ValueError("eps2 must be positive")
    N, M = params.n_users, params.n_servers
    cur = set_gamma_optimal(alloc, params.omega_b)
    cur = cur.replace(phi_off=np.clip(cur.phi_off, 0.0, phi_max))
    values, qs = [], []
    status = "max_iter"
    last = None
    x_rel, phi_rel = cur.x.copy(), cur.phi_off.copy()
    it = 0
    for it in range(1, max_iter + 1):
        q, mats, res = solve_association_sdr(params, cur, phi_max=phi_max, tol=tol)
        last = res
        if res.status not in ("optimal", "optimal_inaccurate"):
            status = res.status
            break
        x_rel, phi_rel = unpack_q(q, N, M)
        cur = cur.replace(x=x_rel, phi_off=phi_rel)
        values.append(res.value)
        qs.append(q)
        if len(values) >= 2:
            if (abs(values[-1] - values[-2]) <= eps2 * abs(values[-2])
                    or np.max(np.abs(qs[-1] - qs[-2])) <= eps2):
                status = "converged"
                break
        if len(values) >= 3:
            # period-2 cycle: keep the lower-valued member
            if (abs(values[-1] - values[-3]) <= eps2 * abs(values[-3])
                    and np.max(np.abs(qs[-1] - qs[-3])) <= eps2):
                if values[-2] < values[-1]:
                    x_rel, phi_rel = unpack_q(qs[-2], N, M)
                status = "converged"
                break
    x_int = round_association(x_rel, rounding)
    out = alloc.replace(x=x_int, phi_off=np.clip(phi_rel, 0.0, phi_max), gamma=cur.gamma)
    out = rescale_shares(out)
    return QcqpResult(alloc=out, x_relaxed=x_rel, phi_relaxed=phi_rel, iterations=it,
                      values=values, status=status, sdp=last)
