"""Shared first-order engines: box-projected spectral descent and an
augmented Lagrangian method for inequality constraints.

Both engines tolerate objective values of +inf (used for log-barrier and
log-domain cliffs): the line search simply rejects such trial points, so
iterates never leave the domain they started in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

_ARMIJO_C1 = 1e-4
_MAX_BACKTRACKS = 40
_STEP_MIN = 1e-12
_STEP_MAX = 1e12
_BIG_M = 1e30


class SolverError(RuntimeError):
    """Raised when an engine cannot start (e.g. non-finite initial value)."""


@dataclass
class BoxDescentResult:
    z: np.ndarray
    value: float
    iterations: int
    converged: bool
    projected_grad_norm: float
    status: str


def _proj(z, lower, upper):
    return np.minimum(np.maximum(z, lower), upper)


def _quasi_newton_attempt(value, grad, z0, lower, upper, tol, max_iter):
    """One L-BFGS-B pass; non-finite trial values are capped at a large
    finite number (with a zero gradient) so its line search retreats
    instead of aborting.  Returns the candidate point."""

    def fun(z):
        v = float(value(z))
        if not np.isfinite(v):
            return _BIG_M, np.zeros_like(z)
        return v, np.asarray(grad(z), dtype=float)

    bounds = [
        (None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi)
        for lo, hi in zip(lower, upper)
    ]
    res = _scipy_minimize(
        fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 0.5 * tol, "maxcor": 20},
    )
    return np.asarray(res.x, dtype=float), int(res.nit)


def minimize_box(
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    z0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 500,
    quasi_newton: bool = False,
) -> BoxDescentResult:
    """Spectral (Barzilai-Borwein) projected descent with monotone Armijo
    backtracking over the box ``lower <= z <= upper``.

    Convergence is declared on the sup-norm of the projected gradient step
    ``z - P(z - grad)``.  The objective sequence is non-increasing and the
    returned point lies in the box exactly.

    With ``quasi_newton`` a limited-memory quasi-Newton pass runs first and
    the spectral loop continues from its result when that improved the
    objective; the loop also serves as the convergence certificate.
    """
    z = _proj(np.asarray(z0, dtype=float).copy(), lower, upper)
    v = float(value(z))
    if not np.isfinite(v):
        raise SolverError("initial point has non-finite objective value")
    qn_iters = 0
    if quasi_newton:
        z_qn, qn_iters = _quasi_newton_attempt(value, grad, z, lower, upper, tol, max_iter)
        z_qn = _proj(z_qn, lower, upper)
        v_qn = float(value(z_qn))
        if np.isfinite(v_qn) and v_qn <= v:
            z, v = z_qn, v_qn
    g = np.asarray(grad(z), dtype=float)
    alpha = 1.0 / max(float(np.abs(z - _proj(z - g, lower, upper)).max()), _STEP_MIN)
    alpha = min(max(alpha, _STEP_MIN), _STEP_MAX)

    for it in range(qn_iters, max_iter):
        pg = z - _proj(z - g, lower, upper)
        pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
        if pg_norm <= tol:
            return BoxDescentResult(z, v, it, True, pg_norm, "converged")

        step = alpha
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            z_new = _proj(z - step * g, lower, upper)
            d = z_new - z
            decrease = float(g @ d)
            if decrease >= 0.0:
                step *= 0.5
                continue
            v_new = float(value(z_new))
            if np.isfinite(v_new) and v_new <= v + _ARMIJO_C1 * decrease:
                accepted = True
                break
            # retreat fast from domain cliffs, conventionally otherwise
            step *= 0.25 if not np.isfinite(v_new) else 0.5
        if not accepted:
            return BoxDescentResult(z, v, it, False, pg_norm, "line_search_failed")

        g_new = np.asarray(grad(z_new), dtype=float)
        s = z_new - z
        yk = g_new - g
        sy = float(s @ yk)
        if sy > 1e-16 * max(1.0, float(s @ s)):
            alpha = float(s @ s) / sy
        else:
            # flat or concave curvature along s: race ahead (linear pieces)
            alpha = step * 4.0
        alpha = min(max(alpha, _STEP_MIN), _STEP_MAX)
        z, v, g = z_new, v_new, g_new

    pg = z - _proj(z - g, lower, upper)
    pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
    converged = pg_norm <= tol
    return BoxDescentResult(z, v, max_iter, converged, pg_norm, "converged" if converged else "max_iter")


@dataclass
class AugLagOptions:
    constraint_tol: float = 1e-6
    stationarity_tol: float = 1e-5
    max_major: int = 50
    inner_max_iter: int = 400
    inner_tol0: float = 1e-2
    inner_tol_shrink: float = 0.2
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    violation_shrink: float = 0.25
    penalty_max: float = 1e12
    # feasible majors with objective improvement below stall_ftol this many
    # times in a row end the run early with the best feasible iterate
    stall_majors: int = 3
    stall_ftol: float = 1e-9


@dataclass
class AugLagResult:
    z: np.ndarray  # best feasible iterate when one exists, else the last
    multipliers: np.ndarray
    value: float
    constraints: np.ndarray
    violation: float
    stationarity: float
    status: str  # converged | stalled | max_iter | no_feasible_point
    major_iterations: int
    inner_iterations: int
    z_last: Optional[np.ndarray] = None  # final iterate, for continuation
    history: List[dict] = field(default_factory=list)


def _phr_value(c, m, rho):
    # classic Powell-Hestenes-Rockafellar shifted penalty for c <= 0
    shifted = m + rho * c
    active = shifted > 0.0
    out = np.where(active, m * c + 0.5 * rho * c * c, -0.5 * m * m / rho)
    return float(out.sum())


def minimize_auglag(
    values: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    grad_lagrangian: Callable[[np.ndarray, np.ndarray], np.ndarray],
    z0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    opts: Optional[AugLagOptions] = None,
) -> AugLagResult:
    """Minimize ``f(z)`` subject to ``c(z) <= 0`` and box bounds.

    ``values(z)`` returns ``(f, c)``; ``grad_lagrangian(z, w)`` returns
    ``grad f(z) + jac c(z).T @ w``, which is the only derivative form the
    method ever needs (matrix-free callers never build the Jacobian).
    Multiplier updates are PHR style; the penalty grows by
    ``penalty_growth`` whenever the constraint violation fails to shrink by
    ``violation_shrink`` between major iterations.  The best feasible
    iterate seen (including the start) is tracked and returned when the
    iteration budget runs out or progress stalls; feasibility wins over
    stationarity.
    """
    opts = opts or AugLagOptions()
    z = np.minimum(np.maximum(np.asarray(z0, dtype=float).copy(), lower), upper)
    f0, c0 = values(z)
    if not np.isfinite(f0):
        raise SolverError("augmented Lagrangian start has non-finite objective")
    q = c0.size
    m = np.zeros(q)
    rho = opts.penalty0
    inner_tol = opts.inner_tol0

    def viol(c):
        return float(np.maximum(c, 0.0).max()) if c.size else 0.0

    v_prev = viol(c0)
    best_feasible = None
    if v_prev <= opts.constraint_tol:
        best_feasible = (z.copy(), f0, c0.copy())

    history = []
    inner_total = 0
    stationarity = np.inf
    f, c = f0, c0
    stalled = 0
    status = "max_iter"

    for major in range(opts.max_major):
        def merit_value(zz):
            fz, cz = values(zz)
            if not np.isfinite(fz):
                return np.inf
            return fz + (_phr_value(cz, m, rho) if q else 0.0)

        def merit_grad(zz):
            _, cz = values(zz)
            w = np.maximum(m + rho * cz, 0.0) if q else np.zeros(0)
            return grad_lagrangian(zz, w)

        res = minimize_box(
            merit_value, merit_grad, z, lower, upper,
            tol=inner_tol, max_iter=opts.inner_max_iter, quasi_newton=True,
        )
        inner_total += res.iterations
        z = res.z
        f, c = values(z)
        v = viol(c)
        m_next = np.maximum(m + rho * c, 0.0) if q else m
        lag_grad = grad_lagrangian(z, m_next)
        stationarity = float(np.abs(z - _proj(z - lag_grad, lower, upper)).max())
        history.append(
            {"major": major, "value": f, "violation": v, "stationarity": stationarity,
             "penalty": rho, "inner_iterations": res.iterations}
        )
        if v <= opts.constraint_tol:
            if best_feasible is not None and f >= best_feasible[1] - opts.stall_ftol * (1.0 + abs(f)):
                stalled += 1
            else:
                stalled = 0
            if best_feasible is None or f < best_feasible[1]:
                best_feasible = (z.copy(), f, c.copy())
        if v <= opts.constraint_tol and stationarity <= opts.stationarity_tol:
            return AugLagResult(
                z, m_next, f, c, v, stationarity, "converged", major + 1, inner_total, z.copy(), history
            )
        if stalled >= opts.stall_majors:
            status = "stalled"
            break
        if v > opts.constraint_tol and v > opts.violation_shrink * v_prev:
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
        m = m_next
        v_prev = v
        inner_tol = max(inner_tol * opts.inner_tol_shrink, 0.3 * opts.stationarity_tol)

    if best_feasible is not None:
        zb, fb, cb = best_feasible
        return AugLagResult(
            zb, m, fb, cb, viol(cb), stationarity, status, len(history), inner_total, z.copy(), history
        )
    return AugLagResult(
        z, m, f, c, viol(c), stationarity, "no_feasible_point", len(history), inner_total, z.copy(), history
    )
