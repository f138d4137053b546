"""Brute-force and finite-difference verifiers.

The DPE here is transcribed from the model equations on its own; only the
public ``ScenarioParams`` and ``Allocation`` containers are shared with the
package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Allocation, ScenarioParams

_FLOOR = 1e-6
MAX_GRID_WORK = 10**8


class GridTooLargeError(ValueError):
    """The requested grid would take more evaluations than allowed."""


@dataclass
class GridResult:
    value: float
    alloc: Allocation
    evaluations: int


def _user_part(p, n, phi, psi):
    """Local DPE term of user n on a (phi, psi) mesh."""
    psi = np.maximum(psi, _FLOOR)
    per_bit = (p.omega_t * p.eta_u[n] / (psi * p.f_u[n])
               + p.omega_e * p.kappa_u[n] * p.eta_u[n] * (psi * p.f_u[n]) ** 2)
    # c (1-phi) d / ((1-phi) d per_bit); exactly zero once nothing stays local
    return np.where(phi < 1.0, p.c_u[n] / per_bit, 0.0)


def _server_part(p, n, m, phi, rho, gam, bw, z, t_sv):
    """Offload DPE term of the pair (n, m); arguments broadcast."""
    rho = np.maximum(rho, _FLOOR)
    bw = np.maximum(bw, _FLOOR)
    z = np.maximum(z, _FLOOR)
    bits = phi * p.d[n]
    hz = bw * p.b_s[m]
    r = hz * np.log2(1.0 + p.gain[n, m] * rho * p.p_u[n] / (p.noise_psd * hz))
    t_ut = bits / r
    f_p = gam * z * p.f_s[m]
    f_g = (1.0 - gam) * z * p.f_s[m]
    load_g = p.eta_bgen[m] if p.eta_bgen is not None else p.omega_b * p.eta_s[m]
    delay = (t_ut + bits * p.eta_s[m] / f_p + bits * load_g / f_g
             + p.block_size / p.r_wired[m] + t_sv)
    energy = (rho * p.p_u[n] * t_ut + p.kappa_s[m] * bits * p.eta_s[m] * f_p ** 2
              + p.kappa_s[m] * bits * load_g * f_g ** 2)
    cost = p.omega_t * delay + p.omega_e * energy
    return np.where(bits > 0, p.c_us[n, m] * bits / cost, 0.0)


def grid_search_dpe(params: ScenarioParams, x, step: float = 0.05,
                    other_gamma: float = 0.5, other_zeta: float | None = None,
                    max_work: int = MAX_GRID_WORK) -> GridResult:
    """Exhaustive DPE maximization over a uniform grid with ``x`` held fixed.

    Every continuous variable takes values ``k * step`` in [0, 1] (gamma only
    the interior ones). The objective separates over users once each user's
    (phi_bw, zeta) cell is fixed, so the grid maximum is found exactly by a
    per-user table followed by a knapsack over each server's unit budget.

    Parameters
    ----------
    x : (N, M) array
        Integral association, one server per user.
    other_gamma, other_zeta : float
        Values held on unconnected pairs; they only enter the validation delay.
        ``other_zeta`` defaults to 1/N.

    Raises
    ------
    GridTooLargeError
        If the table work exceeds ``max_work`` evaluations.
    """
    p = params
    x = np.asarray(x, dtype=float)
    N, M = p.n_users, p.n_servers
    if x.shape != (N, M) or not np.all((x == 0) | (x == 1)) or np.any(x.sum(axis=1) != 1):
        raise ValueError("x must be an integral association with one server per user")
    k = int(round(1.0 / step))
    if k < 1 or abs(k * step - 1.0) > 1e-9:
        raise ValueError("step must divide 1")
    g = np.linspace(0.0, 1.0, k + 1)
    g_int = g[1:-1]
    work = N * (g.size ** 4 * max(g_int.size, 1) + g.size ** 2)
    if work > max_work:
        raise GridTooLargeError(f"grid needs {work} evaluations, limit is {max_work}")
    oz = 1.0 / N if other_zeta is None else other_zeta
    serv = np.argmax(x, axis=1)

    # best over (phi, rho, psi, gamma) for every (phi_bw, zeta) cell
    tables, args = [], []
    for n in range(N):
        m = serv[n]
        if M > 1:
            others = [j for j in range(M) if j != m]
            t_sv = max(p.eta_v / ((1.0 - other_gamma) * oz * p.f_s[j]) for j in others)
        else:
            t_sv = 0.0
        u = _user_part(p, n, g[:, None], g[None, :])  # (phi, psi)
        u_best = u.max(axis=1)
        u_arg = g[u.argmax(axis=1)]
        PH, RH, GA, BW, Z = np.meshgrid(g, g, g_int, g, g, indexing="ij")
        s = _server_part(p, n, m, PH, RH, GA, BW, Z, t_sv) + u_best[:, None, None, None, None]
        flat = s.reshape(-1, g.size * g.size)  # rows: (phi, rho, gamma); cols: (bw, z)
        best_row = flat.argmax(axis=0)
        tables.append(flat[best_row, np.arange(flat.shape[1])].reshape(g.size, g.size))
        ip, ir, ig = np.unravel_index(best_row, PH.shape[:3])
        args.append((g[ip], g[ir], g_int[ig], u_arg[ip]))

    # knapsack over each server's (bandwidth, cpu) budget in grid units
    cells = np.full((N, 2), 0, dtype=int)
    total = 0.0
    for m in range(M):
        users = np.flatnonzero(serv == m)
        if users.size == 0:
            continue
        val = np.full((k + 1, k + 1), -np.inf)
        val[0, 0] = 0.0
        choice = []
        for n in users:
            new = np.full_like(val, -np.inf)
            pick = np.zeros((k + 1, k + 1, 2), dtype=int)
            for a in range(k + 1):
                for b in range(k + 1):
                    cand = val[: a + 1, : b + 1][::-1, ::-1] + tables[n][: a + 1, : b + 1]
                    i = np.unravel_index(np.argmax(cand), cand.shape)
                    new[a, b] = cand[i]
                    pick[a, b] = i
            val = new
            choice.append(pick)
        a, b = np.unravel_index(np.argmax(val), val.shape)
        total += float(val[a, b])
        for n, pick in zip(users[::-1], choice[::-1]):
            i, j = pick[a, b]
            cells[n] = (i, j)
            a, b = a - i, b - j

    alloc = Allocation(x=x.copy(), phi_off=np.zeros(N), gamma=np.full((N, M), other_gamma),
                       phi_bw=np.full((N, M), _FLOOR), rho=np.ones(N),
                       zeta=np.full((N, M), oz), psi=np.ones(N))
    for n in range(N):
        i, j = cells[n]
        c = i * g.size + j
        phi, rho, gam, psi = (arr[c] for arr in args[n])
        m = serv[n]
        alloc.phi_off[n], alloc.rho[n], alloc.psi[n] = phi, rho, psi
        alloc.gamma[n, m], alloc.phi_bw[n, m], alloc.zeta[n, m] = gam, g[i], g[j]
    return GridResult(value=total, alloc=alloc, evaluations=int(work))


def finite_diff_check(fn, point, h: float = 1e-6, grad=None) -> float:
    """Largest relative gap between an analytic gradient and central differences.

    Parameters
    ----------
    fn : callable
        ``v -> (value, gradient)``, or ``v -> value`` when ``grad`` is given.
    h : float
        Step relative to ``max(1, |v_i|)``.

    Raises
    ------
    FloatingPointError
        Listing every coordinate whose evaluations are not finite.
    """
    v = np.asarray(point, dtype=float).copy()
    if grad is None:
        value = lambda z: float(fn(z)[0])
        g = np.asarray(fn(v)[1], dtype=float)
    else:
        value = lambda z: float(fn(z))
        g = np.asarray(grad(v), dtype=float)
    fd = np.empty_like(v)
    bad = []
    for i in range(v.size):
        hi = h * max(1.0, abs(v[i]))
        e = np.zeros_like(v)
        e[i] = hi
        fp, fm = value(v + e), value(v - e)
        fd[i] = (fp - fm) / (2 * hi)
        if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(g[i])):
            bad.append(i)
    if bad:
        raise FloatingPointError(f"non-finite evaluation at coordinates {bad}")
    scale = max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-300)
    return float(np.max(np.abs(g - fd)) / scale)
