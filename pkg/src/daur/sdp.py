"""Small dense SDP solver: min Tr(C S) s.t. Tr(A_k S) {=, <=} b_k, S PSD.

Infeasible-start primal-dual interior point method with the HKM search
direction and Mehrotra predictor-corrector steps. Inequalities get a
nonnegative slack. Constraint matrices are kept in coordinate form so the
Schur complement costs O(D^2 nnz) per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SdpProblem:
    """Cost matrix plus a list of ``(A, sense, rhs)`` with sense ``"eq"`` or ``"le"``."""

    cost: np.ndarray
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        C = np.asarray(self.cost, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("cost must be square")
        self.cost = 0.5 * (C + C.T)
        cons = []
        for A, sense, rhs in self.constraints:
            A = np.asarray(A, dtype=float)
            if A.shape != C.shape:
                raise ValueError(f"constraint matrix shape {A.shape} does not match {C.shape}")
            if sense not in ("eq", "le"):
                raise ValueError(f"unknown sense {sense!r}")
            cons.append((0.5 * (A + A.T), sense, float(rhs)))
        self.constraints = cons

    @property
    def dim(self) -> int:
        return self.cost.shape[0]

    def add(self, A, sense, rhs):
        A = np.asarray(A, dtype=float)
        self.constraints.append((0.5 * (A + A.T), sense, float(rhs)))

    def objective(self, S) -> float:
        return float(np.sum(self.cost * S))

    def residuals(self, S) -> np.ndarray:
        """Signed violation per constraint (positive means violated)."""
        out = []
        for A, sense, rhs in self.constraints:
            v = float(np.sum(A * S)) - rhs
            out.append(abs(v) if sense == "eq" else max(v, 0.0))
        return np.array(out)


@dataclass
class SdpResult:
    S: np.ndarray
    value: float
    # "optimal" | "optimal_inaccurate" | "infeasible" | "max_iter" | "numerical_failure"
    status: str
    y: np.ndarray
    Z: np.ndarray
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int

    @property
    def dual_value(self) -> float:
        return self.value - self.gap


def _max_step(X, dX):
    """Largest a in (0, inf) with X + a dX PSD (X positive definite)."""
    L = np.linalg.cholesky(X)
    Li = np.linalg.inv(L)
    ev = np.linalg.eigvalsh(Li @ dX @ Li.T)
    lo = ev.min()
    return np.inf if lo >= 0 else -1.0 / lo


def _max_step_vec(s, ds):
    neg = ds < 0
    return np.inf if not np.any(neg) else float(np.min(-s[neg] / ds[neg]))


def solve_sdp(prob: SdpProblem, tol: float = 1e-8, max_iter: int = 100,
              accept: float = 1e-6) -> SdpResult:
    """Solve ``prob``; ``tol`` bounds relative residuals and the relative gap.

    If the iteration stalls or breaks down before ``tol`` is reached, the best
    iterate is returned; its status is ``optimal_inaccurate`` when it meets
    the looser ``accept`` level.
    """
    D = prob.dim
    K = len(prob.constraints)
    scale = max(np.abs(prob.cost).max(), 1e-300)
    C = prob.cost / scale
    b = np.array([c[2] for c in prob.constraints])
    le = np.array([c[1] == "le" for c in prob.constraints], dtype=bool)
    le_idx = np.flatnonzero(le)

    # coordinate form of every constraint matrix
    ents = []
    for k, (A, _, _) in enumerate(prob.constraints):
        r, c = np.nonzero(A)
        ents.append((r, c, A[r, c]))
    all_k = np.concatenate([np.full(len(e[0]), k) for k, e in enumerate(ents)]) if K else np.zeros(0, int)
    all_r = np.concatenate([e[0] for e in ents]) if K else np.zeros(0, int)
    all_c = np.concatenate([e[1] for e in ents]) if K else np.zeros(0, int)
    all_v = np.concatenate([e[2] for e in ents]) if K else np.zeros(0)

    def A_dot(X):
        # Tr(A_k X) for every k
        return np.bincount(all_k, all_v * X[all_r, all_c], minlength=K)

    def A_adj(y):
        M = np.zeros((D, D))
        np.add.at(M, (all_r, all_c), all_v * y[all_k])
        return M

    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(C)
    X = np.eye(D)
    Z = np.eye(D)
    y = np.zeros(K)
    s = np.ones(le_idx.size)
    z = np.ones(le_idx.size)
    n_cone = D + le_idx.size

    status = "max_iter"
    it = 0
    best = None
    for it in range(1, max_iter + 1):
        rp = b - A_dot(X)
        rp[le_idx] -= s
        Rd = C - A_adj(y) - Z
        rd = y[le_idx] + z  # dual slack equation: -y_le - z = 0
        pobj = float(np.sum(C * X))
        dobj = float(b @ y)
        mu = (np.sum(X * Z) + s @ z) / n_cone
        pres = np.linalg.norm(rp) / bnorm
        dres = max(np.linalg.norm(Rd), np.linalg.norm(rd)) / cnorm
        rgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if best is None or max(pres, dres, rgap) < best[0]:
            best = (max(pres, dres, rgap), X.copy(), y.copy(), Z.copy())
        if pres <= tol and dres <= tol and rgap <= tol:
            status = "optimal"
            break
        if not (np.isfinite(pobj) and np.isfinite(dobj)):
            status = "numerical_failure"
            break
        # primal infeasibility (Farkas) check on the dual direction
        ynorm = np.linalg.norm(y)
        if ynorm > 1e8 * cnorm:
            yh = y / ynorm
            if b @ yh > 1e-8 and np.linalg.eigvalsh(-A_adj(yh)).min() >= -1e-7 \
                    and np.all(yh[le_idx] <= 1e-7):
                status = "infeasible"
                break

        try:
            Zi = np.linalg.inv(Z)
            Zi = 0.5 * (Zi + Zi.T)
        except np.linalg.LinAlgError:
            status = "numerical_failure"
            break
        # Schur complement M_ij = Tr(A_i X A_j Z^-1)
        M = np.empty((K, K))
        for i, (r, c, v) in enumerate(ents):
            # T = Z^-1 A_i X, only through the nonzero pattern of A_i
            T = (Zi[:, r] * v) @ X[c, :]
            M[i] = np.bincount(all_k, all_v * T[all_c, all_r], minlength=K)
        M = 0.5 * (M + M.T)
        szr = np.zeros(K)
        szr[le_idx] = s / z
        M[np.diag_indices(K)] += szr
        try:
            Lm = np.linalg.cholesky(M)
            solveM = lambda rhs: np.linalg.solve(Lm.T, np.linalg.solve(Lm, rhs))
        except np.linalg.LinAlgError:
            Mreg = M + 1e-14 * np.trace(M) / max(K, 1) * np.eye(K)
            solveM = lambda rhs: np.linalg.lstsq(Mreg, rhs, rcond=None)[0]

        XRdZi = X @ Rd @ Zi
        tr_XRdZi = A_dot(XRdZi)

        def direction(Rc, rc):
            rhs = rp - A_dot(Rc) + tr_XRdZi
            rhs[le_idx] -= rc + (s / z) * rd
            dy = solveM(rhs)
            dZ = Rd - A_adj(dy)
            dX = Rc - X @ dZ @ Zi
            dX = 0.5 * (dX + dX.T)
            dz = -rd - dy[le_idx]
            ds = rc - (s / z) * dz
            return dX, dy, dZ, ds, dz

        def steps(dX, dZ, ds, dz):
            ap = min(_max_step(X, dX), _max_step_vec(s, ds))
            ad = min(_max_step(Z, dZ), _max_step_vec(z, dz))
            return min(1.0, 0.98 * ap), min(1.0, 0.98 * ad)

        try:
            # predictor
            dXa, dya, dZa, dsa, dza = direction(-X, -s)
            ap, ad = steps(dXa, dZa, dsa, dza)
            mu_aff = (np.sum((X + ap * dXa) * (Z + ad * dZa)) + (s + ap * dsa) @ (z + ad * dza)) / n_cone
            sigma = min(1.0, (mu_aff / mu) ** 3)
            # corrector
            Rc = sigma * mu * Zi - X - dXa @ dZa @ Zi
            rc = (sigma * mu - s * z - dsa * dza) / z
            dX, dy, dZ, ds, dz = direction(Rc, rc)
            ap, ad = steps(dX, dZ, ds, dz)
        except np.linalg.LinAlgError:
            status = "numerical_failure"
            break
        X = X + ap * dX
        X = 0.5 * (X + X.T)
        s = s + ap * ds
        y = y + ad * dy
        Z = Z + ad * dZ
        Z = 0.5 * (Z + Z.T)
        z = z + ad * dz

    if status in ("numerical_failure", "max_iter") and best is not None:
        merit, X, y, Z = best
        if merit <= accept:
            status = "optimal_inaccurate"
    Xs = X
    value = float(np.sum(prob.cost * Xs))
    dval = float(b @ y) * scale
    pres = float(np.max(prob.residuals(Xs), initial=0.0))
    dres = float(np.linalg.norm(C - A_adj(y) - Z)) * scale
    return SdpResult(S=Xs, value=value, status=status, y=y * scale, Z=Z * scale,
                     gap=value - dval, primal_residual=pres, dual_residual=dres, iterations=it)
