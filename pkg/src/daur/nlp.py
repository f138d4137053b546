"""Log-barrier interior-point solver for small smooth concave maximization.

Maximizes a concave ``f`` over ``lb <= v <= ub``, ``A v <= b`` and smooth
convex ``g_i(v) <= 0``. Damped Newton steps on ``t f(v) + sum log(slack)``
with ``t`` multiplied by ``mu`` between centering phases.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class InfeasibleStartError(ValueError):
    """The supplied start point is not strictly inside the feasible set."""


@dataclass
class ConcaveProgram:
    """A concave maximization problem.

    Parameters
    ----------
    dim : int
        Number of variables.
    objective : callable
        ``v -> (value, gradient)``.
    x0 : array
        Strictly feasible start.
    lb, ub : array, optional
        Box bounds (``-inf``/``inf`` entries allowed).
    A_ub, b_ub : array, optional
        Linear constraints ``A_ub @ v <= b_ub``.
    constraints : sequence of callables, optional
        Each ``v -> (g, grad)`` or ``v -> (g, grad, hess)`` with ``g <= 0``
        required; ``g`` must be convex.
    hessian : callable, optional
        ``v -> Hessian of the objective``. Built from gradient differences
        when absent.
    """

    dim: int
    objective: Callable
    x0: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    constraints: Sequence[Callable] = field(default_factory=list)
    hessian: Optional[Callable] = None

    def __post_init__(self):
        n = int(self.dim)
        self.dim = n
        self.x0 = np.asarray(self.x0, dtype=float).reshape(n)
        self.lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(
            np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(
            np.asarray(self.ub, dtype=float), (n,)).copy()
        if self.A_ub is None:
            self.A_ub = np.zeros((0, n))
            self.b_ub = np.zeros(0)
        self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float))
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if self.A_ub.shape != (self.b_ub.size, n):
            raise ValueError("A_ub must have shape (len(b_ub), dim)")
        if np.any(self.lb > self.ub):
            raise ValueError("lb exceeds ub")

    def linear_rows(self):
        """All box and linear constraints stacked as ``G v <= h``."""
        eye = np.eye(self.dim)
        lo = np.isfinite(self.lb)
        hi = np.isfinite(self.ub)
        G = np.vstack([-eye[lo], eye[hi], self.A_ub])
        h = np.concatenate([-self.lb[lo], self.ub[hi], self.b_ub])
        return G, h

    def residual(self, v) -> float:
        """Largest constraint violation at ``v`` (0 when feasible)."""
        G, h = self.linear_rows()
        worst = float(np.max(G @ v - h, initial=0.0))
        for con in self.constraints:
            worst = max(worst, float(con(v)[0]))
        return max(worst, 0.0)


@dataclass
class NlpResult:
    x: np.ndarray
    value: float
    status: str  # "optimal" | "max_iter"
    iterations: int
    gap: float
    kkt_residual: float
    start_value: float


def _fd_hessian(grad_fn, v, rel=1e-6):
    n = v.size
    H = np.empty((n, n))
    for i in range(n):
        h = rel * max(1.0, abs(v[i]))
        e = np.zeros(n)
        e[i] = h
        H[:, i] = (grad_fn(v + e) - grad_fn(v - e)) / (2 * h)
    return 0.5 * (H + H.T)


def maximize(prog: ConcaveProgram, tol: float = 1e-8, mu: float = 10.0,
             max_newton: int = 200, max_outer: int = 40) -> NlpResult:
    """Maximize ``prog`` to relative duality-gap ``tol``.

    Raises
    ------
    InfeasibleStartError
        If ``prog.x0`` is not strictly feasible.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    G, h = prog.linear_rows()
    v = prog.x0.copy()
    if np.any(G @ v >= h):
        raise InfeasibleStartError("start point is not strictly inside the linear constraints")
    cons = list(prog.constraints)

    def con_eval(x, need_hess):
        out = []
        for c in cons:
            res = c(x)
            g, dg = float(res[0]), np.asarray(res[1], dtype=float)
            if need_hess:
                hess = res[2] if len(res) > 2 else _fd_hessian(lambda z, c=c: np.asarray(c(z)[1]), x)
            else:
                hess = None
            out.append((g, dg, hess))
        return out

    if any(g >= 0 for g, _, _ in con_eval(v, False)):
        raise InfeasibleStartError("start point violates a nonlinear constraint")

    def fgrad(x):
        val, grad = prog.objective(x)
        return float(val), np.asarray(grad, dtype=float)

    def fhess(x):
        if prog.hessian is not None:
            return np.asarray(prog.hessian(x), dtype=float)
        return _fd_hessian(lambda z: fgrad(z)[1], x)

    def barrier(x, t):
        s = h - G @ x
        if np.any(s <= 0):
            return -np.inf
        total = t * fgrad(x)[0] + np.log(s).sum()
        for c in cons:
            g = float(c(x)[0])
            if g >= 0:
                return -np.inf
            total += np.log(-g)
        return total

    f0, _ = fgrad(v)
    m_terms = G.shape[0] + len(cons)
    if m_terms == 0:
        # unconstrained: plain damped Newton on f
        m_terms = 1
    t = m_terms / max(1.0, abs(f0))
    iters = 0
    status = "max_iter"
    for _ in range(max_outer):
        for _ in range(max_newton):
            iters += 1
            f, df = fgrad(v)
            s = h - G @ v
            grad = t * df - G.T @ (1.0 / s)
            hess = t * fhess(v) - (G.T * (1.0 / s ** 2)) @ G
            for g, dg, d2g in con_eval(v, True):
                grad += dg / g  # d/dv log(-g) = dg / g
                hess += d2g / g - np.outer(dg, dg) / g ** 2
            neg = -0.5 * (hess + hess.T)
            # regularize if concavity is lost numerically
            reg = 0.0
            scale = max(1.0, np.abs(np.diag(neg)).max())
            while True:
                try:
                    L = np.linalg.cholesky(neg + reg * np.eye(v.size))
                    break
                except np.linalg.LinAlgError:
                    reg = max(1e-12 * scale, reg * 10)
            step = np.linalg.solve(L.T, np.linalg.solve(L, grad))
            dec = float(grad @ step)
            if dec / 2 <= 1e-10:
                break
            # longest step keeping linear slacks positive
            Gd = G @ step
            pos = Gd > 0
            smax = 1.0
            if np.any(pos):
                smax = min(1.0, 0.99 * float(np.min(s[pos] / Gd[pos])))
            phi0 = barrier(v, t)
            a = smax
            while a > 1e-14:
                cand = v + a * step
                if barrier(cand, t) >= phi0 + 0.25 * a * dec:
                    break
                a *= 0.5
            else:
                break
            v = cand
        f, _ = fgrad(v)
        if m_terms / t <= tol * (1.0 + abs(f)):
            status = "optimal"
            break
        t *= mu

    f, df = fgrad(v)
    # multiplier estimates from the barrier centering condition
    s = h - G @ v
    lam = 1.0 / (t * s)
    stat = df - G.T @ lam
    for g, dg, _ in con_eval(v, False):
        stat -= dg * (-1.0 / (t * g))
    kkt = float(np.linalg.norm(stat, np.inf))
    if f < f0:
        v, f = prog.x0.copy(), f0
    return NlpResult(x=v, value=f, status=status, iterations=iters, gap=m_terms / t,
                     kkt_residual=kkt, start_value=f0)
