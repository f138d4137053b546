"""System model: scenario parameters, decision variables, and cost/DPE evaluation.

Units: bits, seconds, joules, Hz, watts, cycles. Every delay and energy term is
vectorised over users (axis 0) and servers (axis 1).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Applied to psi, rho, phi_bw and zeta before any division.
EPS_FLOOR = 1e-6


class CostDivergenceError(FloatingPointError):
    """Raised when a cost term evaluates to a non-finite value."""

    def __init__(self, term: str, index=None):
        self.term = term
        self.index = index
        msg = f"cost term {term!r} is not finite"
        if index is not None:
            msg += f" at index {index}"
        super().__init__(msg)


def _as_vec(value, n, name):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
    return arr


def _as_mat(value, n, m, name):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full((n, m), float(arr))
    if arr.shape != (n, m):
        raise ValueError(f"{name} must have shape ({n}, {m}), got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioParams:
    """Physical constants and per-user / per-server parameters.

    Scalars passed for per-entity fields are broadcast. ``eta_bgen`` is the
    server's block-generation load in cycles per bit; when ``None`` the load is
    ``omega_b * eta_s``.
    """

    n_users: int
    n_servers: int
    d: np.ndarray
    eta_u: np.ndarray
    eta_s: np.ndarray
    f_u: np.ndarray
    f_s: np.ndarray
    p_u: np.ndarray
    b_s: np.ndarray
    kappa_u: np.ndarray
    kappa_s: np.ndarray
    gain: np.ndarray
    noise_psd: float
    block_size: float
    r_wired: np.ndarray
    eta_v: float = 1e6
    omega_b: float = 1.0
    omega_t: float = 0.5
    omega_e: float = 0.5
    c_u: np.ndarray = None
    c_us: np.ndarray = None
    eta_bgen: Optional[np.ndarray] = None

    def __post_init__(self):
        n, m = int(self.n_users), int(self.n_servers)
        if n < 1 or m < 1:
            raise ValueError("n_users and n_servers must be >= 1")
        object.__setattr__(self, "n_users", n)
        object.__setattr__(self, "n_servers", m)
        for name in ("d", "eta_u", "f_u", "p_u", "kappa_u"):
            object.__setattr__(self, name, _as_vec(getattr(self, name), n, name))
        for name in ("eta_s", "f_s", "b_s", "kappa_s", "r_wired"):
            object.__setattr__(self, name, _as_vec(getattr(self, name), m, name))
        object.__setattr__(self, "gain", _as_mat(self.gain, n, m, "gain"))
        c_u = 2e-6 if self.c_u is None else self.c_u
        c_us = 2e-6 if self.c_us is None else self.c_us
        object.__setattr__(self, "c_u", _as_vec(c_u, n, "c_u"))
        object.__setattr__(self, "c_us", _as_mat(c_us, n, m, "c_us"))
        if self.eta_bgen is not None:
            object.__setattr__(self, "eta_bgen", _as_vec(self.eta_bgen, m, "eta_bgen"))
        for name in ("noise_psd", "block_size", "eta_v", "omega_b", "omega_t", "omega_e"):
            object.__setattr__(self, name, float(getattr(self, name)))

        positive = ["d", "eta_u", "eta_s", "f_u", "f_s", "p_u", "b_s", "kappa_u",
                    "kappa_s", "gain", "r_wired", "c_u", "c_us"]
        if self.eta_bgen is not None:
            positive.append("eta_bgen")
        for name in positive:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} must be finite and strictly positive")
        for name in ("noise_psd", "block_size", "eta_v", "omega_b"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be finite and strictly positive")
        if self.omega_t < 0 or self.omega_e < 0 or self.omega_t + self.omega_e <= 0:
            raise ValueError("omega_t and omega_e must be >= 0 with a positive sum")

    @property
    def bgen_cycles(self) -> np.ndarray:
        """Block-generation cycles per offloaded bit, per server."""
        if self.eta_bgen is not None:
            return self.eta_bgen
        return self.omega_b * self.eta_s

    @property
    def t_bp(self) -> np.ndarray:
        return self.block_size / self.r_wired

    def replace(self, **changes) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = val.tolist() if isinstance(val, np.ndarray) else val
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioParams":
        return cls(**data)

    def __eq__(self, other):
        if not isinstance(other, ScenarioParams):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(eq=False)
class Allocation:
    """The seven decision-variable groups.

    x, gamma, phi_bw and zeta are (N, M); phi_off, rho and psi are (N,).
    """

    x: np.ndarray
    phi_off: np.ndarray
    gamma: np.ndarray
    phi_bw: np.ndarray
    rho: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        for name in ("x", "phi_off", "gamma", "phi_bw", "rho", "zeta", "psi"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        n, m = self.x.shape
        for name in ("gamma", "phi_bw", "zeta"):
            if getattr(self, name).shape != (n, m):
                raise ValueError(f"{name} must have shape {(n, m)}")
        for name in ("phi_off", "rho", "psi"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape {(n,)}")

    @property
    def shape(self):
        return self.x.shape

    def copy(self) -> "Allocation":
        return Allocation(**{k: v.copy() for k, v in self.as_arrays().items()})

    def replace(self, **changes) -> "Allocation":
        arrays = {k: v.copy() for k, v in self.as_arrays().items()}
        arrays.update(changes)
        return Allocation(**arrays)

    def as_arrays(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.as_arrays().items()}

    @classmethod
    def from_dict(cls, data: dict) -> "Allocation":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in data.items()})

    def violations(self, integral: bool = True, tol: float = 1e-9) -> list[str]:
        """List every violated constraint of the joint problem (empty if feasible)."""
        out = []
        x = self.x
        if integral:
            if np.any((np.abs(x) > tol) & (np.abs(x - 1) > tol)):
                out.append("x not binary")
            if np.any(np.abs(x.sum(axis=1) - 1) > tol):
                out.append("x rows do not sum to 1")
        elif np.any(x < -tol) or np.any(x > 1 + tol):
            out.append("x outside [0, 1]")
        for name in ("phi_off", "phi_bw", "zeta", "rho", "psi"):
            arr = getattr(self, name)
            if np.any(arr < -tol) or np.any(arr > 1 + tol):
                out.append(f"{name} outside [0, 1]")
        if np.any(self.gamma <= 0) or np.any(self.gamma >= 1):
            out.append("gamma outside (0, 1)")
        if np.any((x * self.phi_bw).sum(axis=0) > 1 + tol):
            out.append("bandwidth coupling violated")
        if np.any((x * self.zeta).sum(axis=0) > 1 + tol):
            out.append("server CPU coupling violated")
        return out

    def is_feasible(self, integral: bool = True, tol: float = 1e-9) -> bool:
        return not self.violations(integral=integral, tol=tol)


@dataclass
class CostBreakdown:
    """Every delay/energy term, the two composite costs, and the DPE terms.

    Per-user arrays are (N,), per-pair arrays are (N, M).
    """

    t_up: np.ndarray
    e_up: np.ndarray
    rate: np.ndarray
    t_ut: np.ndarray
    e_ut: np.ndarray
    t_sp: np.ndarray
    e_sp: np.ndarray
    t_sg: np.ndarray
    e_sg: np.ndarray
    t_bp: np.ndarray
    t_sv: np.ndarray
    cost_u: np.ndarray
    cost_s: np.ndarray
    dpe_user: np.ndarray
    dpe_server: np.ndarray
    dpe_total: float = field(default=0.0)

    @property
    def t_s(self) -> np.ndarray:
        """Total server-side delay per pair (the binding T^(s) value)."""
        return self.t_ut + self.t_sp + self.t_sg + self.t_bp + self.t_sv


def floored(alloc: Allocation) -> Allocation:
    """Copy of ``alloc`` with the divisor variables floored at ``EPS_FLOOR``."""
    return alloc.replace(
        psi=np.maximum(alloc.psi, EPS_FLOOR),
        rho=np.maximum(alloc.rho, EPS_FLOOR),
        phi_bw=np.maximum(alloc.phi_bw, EPS_FLOOR),
        zeta=np.maximum(alloc.zeta, EPS_FLOOR),
    )


def transmission_rate(params: ScenarioParams, n: int, m: int, phi_bw: float, rho: float) -> float:
    """Shannon rate (bits/s) of user ``n`` towards server ``m`` under FDMA."""
    if not (phi_bw > 0) or not (rho > 0):
        raise ValueError("phi_bw and rho must be positive; apply the epsilon floor first")
    bw = phi_bw * params.b_s[m]
    snr = params.gain[n, m] * rho * params.p_u[n] / (params.noise_psd * bw)
    return float(bw * np.log2(1.0 + snr))


def rate_matrix(params: ScenarioParams, phi_bw: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Vectorised ``transmission_rate`` over all (n, m) pairs."""
    if np.any(phi_bw <= 0) or np.any(rho <= 0):
        raise ValueError("phi_bw and rho must be positive; apply the epsilon floor first")
    bw = phi_bw * params.b_s[None, :]
    snr = params.gain * (rho * params.p_u)[:, None] / (params.noise_psd * bw)
    return bw * np.log1p(snr) / np.log(2.0)


def validation_delay(params: ScenarioParams, gamma: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Block validation delay per pair: slowest verifier among the other servers.

    Zero when there is a single server.
    """
    n, m = params.n_users, params.n_servers
    if m == 1:
        return np.zeros((n, 1))
    per_server = params.eta_v / ((1.0 - gamma) * zeta * params.f_s[None, :])
    out = np.empty((n, m))
    for j in range(m):
        out[:, j] = np.delete(per_server, j, axis=1).max(axis=1)
    return out


def _safe_ratio(num, den):
    # zero numerator -> zero term, whatever the denominator
    out = np.zeros(np.broadcast(num, den).shape)
    nz = num != 0
    np.divide(num, den, out=out, where=nz)
    return out


def evaluate_costs(params: ScenarioParams, alloc: Allocation) -> CostBreakdown:
    """Evaluate all delay, energy, cost and DPE terms for an allocation.

    Divisor variables are floored at ``EPS_FLOOR`` first. Server-side terms
    carry the association factor and vanish on unconnected pairs; the block
    propagation and validation delays do not.
    """
    a = floored(alloc)
    p = params
    phi = a.phi_off
    local_bits = (1.0 - phi) * p.d
    cpu_u = a.psi * p.f_u
    t_up = local_bits * p.eta_u / cpu_u
    e_up = p.kappa_u * local_bits * p.eta_u * cpu_u ** 2

    rate = rate_matrix(p, a.phi_bw, a.rho)
    w = a.x * (phi * p.d)[:, None]  # offloaded bits per pair
    t_ut = w / rate
    e_ut = (a.rho * p.p_u)[:, None] * t_ut

    cpu_proc = a.gamma * a.zeta * p.f_s[None, :]
    cpu_gen = (1.0 - a.gamma) * a.zeta * p.f_s[None, :]
    bgen = p.bgen_cycles[None, :]
    t_sp = w * p.eta_s[None, :] / cpu_proc
    e_sp = p.kappa_s[None, :] * w * p.eta_s[None, :] * cpu_proc ** 2
    t_sg = w * bgen / cpu_gen
    e_sg = p.kappa_s[None, :] * w * bgen * cpu_gen ** 2
    t_bp = np.broadcast_to(p.t_bp[None, :], w.shape).copy()
    t_sv = validation_delay(p, a.gamma, a.zeta)

    cost_u = p.omega_t * t_up + p.omega_e * e_up
    cost_s = (p.omega_t * (t_ut + t_sp + t_sg + t_bp + t_sv)
              + p.omega_e * (e_ut + e_sp + e_sg))

    terms = dict(t_up=t_up, e_up=e_up, rate=rate, t_ut=t_ut, e_ut=e_ut, t_sp=t_sp,
                 e_sp=e_sp, t_sg=t_sg, e_sg=e_sg, t_bp=t_bp, t_sv=t_sv,
                 cost_u=cost_u, cost_s=cost_s)
    for name, arr in terms.items():
        bad = ~np.isfinite(arr)
        if np.any(bad):
            raise CostDivergenceError(name, tuple(np.argwhere(bad)[0]))

    dpe_user = _safe_ratio(p.c_u * local_bits, cost_u)
    dpe_server = _safe_ratio(p.c_us * w, cost_s)
    total = float(dpe_user.sum() + dpe_server.sum())
    return CostBreakdown(dpe_user=dpe_user, dpe_server=dpe_server, dpe_total=total, **terms)


def dpe_objective(params: ScenarioParams, alloc: Allocation) -> float:
    """Total data processing efficiency (the joint problem's objective)."""
    return evaluate_costs(params, alloc).dpe_total
