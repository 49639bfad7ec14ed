"""Dense strictly-convex QP solver (primal active set) for kHz-rate resolves.

Problems are small (n ~ 40 variables, ~100 rows), so every working-set change
re-solves one dense KKT system with LAPACK; no factor updates.  The solver is
deterministic: ties in the ratio test and in multiplier selection break toward
the lowest constraint index, and a hard iteration cap bounds worst-case time.

Warm starting passes the previous solution vector; the initial working set is
inferred from the constraints tight at that point, so an unchanged problem
terminates after one or two KKT solves.

Constraint indexing is unified as [0, m) general rows, [m, m+n) lower bounds,
[m+n, m+2n) upper bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FEASIBILITY_TOL = 1e-8
_LAMBDA_TOL = 1e-9
_STEP_TOL = 1e-11
_TIKHONOV = 1e-9
DEFAULT_MAX_ITERATIONS = 200


@dataclass
class QuadraticProgram:
    """min ½ xᵀHx + gᵀx   s.t.   lb ≤ x ≤ ub,   C x ≤ d."""

    H: np.ndarray
    g: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    C: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def validate(self) -> None:
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H shape {self.H.shape} does not match g length {n}")
        if np.abs(self.H - self.H.T).max(initial=0.0) > 1e-12:
            raise ValueError("H is not symmetric within 1e-12")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bound vectors must match variable count")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub for some variable")
        m = self.d.shape[0]
        if m and self.C.shape != (m, n):
            raise ValueError(f"C shape {self.C.shape} inconsistent with d length {m}")


@dataclass
class QpSolution:
    x: np.ndarray
    status: str                     # optimal | max_iterations | infeasible
    iterations: int
    kkt_residual: float
    mult_general: np.ndarray
    mult_lower: np.ndarray
    mult_upper: np.ndarray


def kkt_residual(qp: QuadraticProgram, x: np.ndarray, multipliers) -> float:
    """Max of stationarity, primal violation, complementarity and dual sign error."""
    mu, lam_lo, lam_hi = multipliers
    m = qp.d.shape[0]
    stat = qp.H @ x + qp.g - lam_lo + lam_hi
    if m:
        stat += qp.C.T @ mu
    res = float(np.abs(stat).max(initial=0.0))
    lo_gap = qp.lb - x
    hi_gap = x - qp.ub
    finite_lo = np.isfinite(qp.lb)
    finite_hi = np.isfinite(qp.ub)
    if finite_lo.any():
        res = max(res, float(lo_gap[finite_lo].max(initial=0.0)))
        res = max(res, float(np.abs(lam_lo[finite_lo] * lo_gap[finite_lo]).max(initial=0.0)))
    if finite_hi.any():
        res = max(res, float(hi_gap[finite_hi].max(initial=0.0)))
        res = max(res, float(np.abs(lam_hi[finite_hi] * hi_gap[finite_hi]).max(initial=0.0)))
    if m:
        slack = qp.C @ x - qp.d
        res = max(res, float(slack.max(initial=0.0)))
        res = max(res, float(np.abs(mu * slack).max(initial=0.0)))
        res = max(res, float(np.maximum(-mu, 0.0).max(initial=0.0)))
    res = max(res, float(np.maximum(-lam_lo, 0.0).max(initial=0.0)))
    res = max(res, float(np.maximum(-lam_hi, 0.0).max(initial=0.0)))
    return res


class _ActiveSetCore:
    """Primal active-set loop over a fixed problem; one instance per solve phase."""

    def __init__(self, H, g, lb, ub, C, d):
        self.H = H
        self.g = g
        self.lb = lb
        self.ub = ub
        self.C = C
        self.d = d
        self.n = g.shape[0]
        self.m = d.shape[0]
        self._vals = np.empty(self.m + 2 * self.n)
        self._proj = np.empty(self.m + 2 * self.n)

    def fill_row(self, out, idx):
        n, m = self.n, self.m
        if idx < m:
            out[:] = self.C[idx]
        else:
            out[:] = 0.0
            if idx < m + n:
                out[idx - m] = -1.0
            else:
                out[idx - m - n] = 1.0

    def values(self, x):
        """Constraint values aᵢᵀx - bᵢ (≤ 0 feasible) for all unified indices.

        Returns internal scratch, overwritten by the next call."""
        n, m, out = self.n, self.m, self._vals
        if m:
            np.matmul(self.C, x, out=out[:m])
            out[:m] -= self.d
        np.subtract(self.lb, x, out=out[m:m + n])
        np.subtract(x, self.ub, out=out[m + n:])
        return out

    def projections(self, p):
        """aᵢᵀp for all unified indices; internal scratch, overwritten next call."""
        n, m, out = self.n, self.m, self._proj
        if m:
            np.matmul(self.C, p, out=out[:m])
        np.negative(p, out=out[m:m + n])
        out[m + n:] = p
        return out

    def initial_working_set(self, x):
        vals = self.values(x)
        tight = np.flatnonzero(np.abs(vals) <= 1e-9)
        # keep at most n rows; dependence is caught by the singular-KKT fallback
        return list(tight[: self.n])

    def run(self, x, working, max_iterations):
        n, m = self.n, self.m
        total = m + 2 * n
        iterations = 0
        status = "max_iterations"
        lam_w = np.zeros(0)
        in_set = np.zeros(total, dtype=bool)
        for idx in working:
            in_set[idx] = True
        K = None
        while iterations < max_iterations:
            iterations += 1
            vals = self.values(x)
            w = len(working)
            if K is None or K.shape[0] != n + w:
                K = np.zeros((n + w, n + w))
                rhs = np.empty(n + w)
            else:
                K[:] = 0.0
            K[:n, :n] = self.H
            np.matmul(self.H, x, out=rhs[:n])
            rhs[:n] += self.g
            np.negative(rhs[:n], out=rhs[:n])
            for k, idx in enumerate(working):
                self.fill_row(K[n + k, :n], idx)
                K[:n, n + k] = K[n + k, :n]
                # restore aᵀ(x+p) = b: ratio-test landings are only accurate
                # relative to the row's scale, and aᵀp = 0 would freeze the gap
                rhs[n + k] = -vals[idx]
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                # dependent working set (can only come from warm-start seeding): restart clean
                if working:
                    for idx in working:
                        in_set[idx] = False
                    working = []
                    K = None
                    continue
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            p = sol[:n]
            lam_w = sol[n:]
            # scale-relative: KKT solve noise grows with |x|, an absolute tol stalls
            step_tol = _STEP_TOL * max(1.0, float(np.abs(x).max(initial=0.0)))
            if np.abs(p).max(initial=0.0) <= step_tol:
                if w == 0 or lam_w.min(initial=0.0) >= -_LAMBDA_TOL:
                    status = "optimal"
                    break
                worst = int(np.argmin(lam_w))
                in_set[working[worst]] = False
                del working[worst]
                K = None
                continue
            # vectorized ratio test against constraints outside the working set
            proj = self.projections(p)
            cand = (~in_set) & (proj > 1e-12) & np.isfinite(vals)
            alpha = 1.0
            blocking = -1
            if cand.any():
                idxs = np.flatnonzero(cand)
                ratios = np.maximum(-vals[idxs], 0.0) / proj[idxs]
                k = int(np.argmin(ratios))
                if ratios[k] < alpha - 1e-15:
                    alpha = float(ratios[k])
                    blocking = int(idxs[k])
            x = x + alpha * p
            if blocking >= 0:
                working.append(blocking)
                in_set[blocking] = True
                K = None
        return x, working, lam_w, iterations, status


def _multipliers(n, m, working, lam_w):
    mu = np.zeros(m)
    lam_lo = np.zeros(n)
    lam_hi = np.zeros(n)
    for k, idx in enumerate(working):
        lam = max(float(lam_w[k]), 0.0) if k < len(lam_w) else 0.0
        if idx < m:
            mu[idx] = lam
        elif idx < m + n:
            lam_lo[idx - m] = lam
        else:
            lam_hi[idx - m - n] = lam
    return mu, lam_lo, lam_hi


def solve(qp: QuadraticProgram, warm_start: Optional[np.ndarray] = None,
          max_iterations: int = DEFAULT_MAX_ITERATIONS, check_pd: bool = True,
          validate: bool = True) -> QpSolution:
    """Solve the QP; ``check_pd=False`` skips the definiteness guard and
    ``validate=False`` the shape/symmetry checks, for callers whose
    construction already guarantees a strictly convex well-formed problem."""
    if validate:
        qp.validate()
    n = qp.g.shape[0]
    m = qp.d.shape[0]
    H = qp.H
    if check_pd:
        # strict positive-definiteness guard (task structure usually guarantees it)
        try:
            np.linalg.cholesky(H - 1e-10 * np.eye(n))
        except np.linalg.LinAlgError:
            H = H + _TIKHONOV * np.eye(n)

    x0 = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    if x0.shape != (n,) or not np.isfinite(x0).all():
        x0 = np.zeros(n)
    np.clip(x0, qp.lb, qp.ub, out=x0)

    core = _ActiveSetCore(H, qp.g, qp.lb, qp.ub, qp.C, qp.d)
    violation = float((qp.C @ x0 - qp.d).max(initial=0.0)) if m else 0.0
    phase1_iters = 0
    if violation > FEASIBILITY_TOL:
        x0, phase1_iters, feasible = _restore_feasibility(qp, H, x0, violation, max_iterations)
        np.clip(x0, qp.lb, qp.ub, out=x0)
        if not feasible:
            mults = _multipliers(n, m, [], np.zeros(0))
            return QpSolution(x0, "infeasible", phase1_iters, kkt_residual(qp, x0, mults),
                              *mults)

    working = core.initial_working_set(x0)
    x, working, lam_w, iters, status = core.run(x0, working, max_iterations)
    mults = _multipliers(n, m, working, lam_w)
    res = kkt_residual(qp, x, mults)
    if status == "optimal" and res > 1e-6:
        status = "max_iterations"
    return QpSolution(x, status, iters + phase1_iters, res, *mults)


def _restore_feasibility(qp: QuadraticProgram, H: np.ndarray, x0: np.ndarray,
                         violation: float, max_iterations: int):
    """Phase 1: elastic relaxation min ½xᵀHx + gᵀx + ½ρs² + Ms with Cx - s·1 ≤ d.

    Using the real objective for the x block keeps the KKT systems as well
    conditioned as the target problem and lands x near the relaxed optimum, so
    phase 2 warm-starts cheaply.  If the slack does not reach zero the penalty
    weight M may simply have been too small, so one escalation retry runs
    before the problem is declared infeasible.
    """
    n = qp.g.shape[0]
    m = qp.d.shape[0]
    scale = max(1.0, float(np.abs(H).max()), float(np.abs(qp.g).max(initial=0.0)))
    Ha = np.zeros((n + 1, n + 1))
    Ha[:n, :n] = H
    Ha[n, n] = scale
    ga = np.zeros(n + 1)
    ga[:n] = qp.g
    Ca = np.zeros((m, n + 1))
    Ca[:, :n] = qp.C
    Ca[:, n] = -1.0
    lba = np.concatenate([qp.lb, [0.0]])
    uba = np.concatenate([qp.ub, [violation + 1.0]])
    total_iters = 0
    z = np.concatenate([x0, [violation + FEASIBILITY_TOL]])
    for penalty in (10.0 * scale * (1.0 + violation), 1e4 * scale * (1.0 + violation)):
        ga[n] = penalty
        core = _ActiveSetCore(Ha, ga, lba, uba, Ca, qp.d)
        z, _, _, iters, _ = core.run(z.copy(), [], max_iterations)
        total_iters += iters
        if float(z[n]) <= 1e3 * FEASIBILITY_TOL:
            return z[:n], total_iters, True
    return z[:n], total_iters, False
