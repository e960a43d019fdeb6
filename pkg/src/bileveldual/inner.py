"""Lower-level solves: the constrained problem at fixed x (with dual
recovery) and the box-constrained regularized Lagrangian minimization.

``solve_lower`` uses a log-barrier interior method over the inequality
constraints with box projection on Y; the multipliers fall out of the
barrier as ``weight / (-g_i)`` and are polished by an active-set least
squares.  Problems whose feasible set has no strict interior (equalities
encoded as paired inequalities) defeat any barrier, so a phase-1 failure
falls back to an augmented Lagrangian solve whose multiplier estimates
play the same role.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

from .problem import BilevelProblem, BoxSet
from .solvers import AugLagOptions, SolverError, minimize_auglag, minimize_box

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500

_BARRIER_WEIGHT0 = 1.0
_BARRIER_SHRINK = 0.2
_PHASE1_MAX_ITER = 300


class LowerLevelError(RuntimeError):
    """Lower-level solve failed in a way the caller cannot recover from."""


@dataclass
class InnerSolution:
    """Result of a lower-level solve at fixed x.

    ``multipliers`` is None for box-only solves (regularized Lagrangian),
    otherwise one nonnegative multiplier per component of g.  ``status`` is
    one of converged, max_iter, infeasible.
    """

    y_star: np.ndarray
    value: float
    multipliers: Optional[np.ndarray]
    status: str
    iterations: int
    kkt_residual: float


def _projected_residual(y, r, box: BoxSet):
    return float(np.abs(y - np.clip(y - r, box.lower, box.upper)).max()) if y.size else 0.0


def _phase1_strict_point(g_eval, g_jac, box: BoxSet, y0):
    """Projected subgradient descent on max_i g_i; returns a strictly
    feasible point or None when no g < 0 point was found."""
    y = box.project(np.asarray(y0, dtype=float).copy())
    g = g_eval(y)
    if g.size == 0 or float(g.max()) < 0.0:
        return y
    scale = 0.5 * float((box.upper - box.lower).max())
    best_y, best_max = y.copy(), float(g.max())
    for k in range(_PHASE1_MAX_ITER):
        i = int(np.argmax(g))
        direction = g_jac(y)[i]
        norm = float(np.abs(direction).max())
        if norm == 0.0:
            break
        y = box.project(y - (scale / (k + 1.0)) / norm * direction)
        g = g_eval(y)
        gmax = float(g.max())
        if gmax < best_max:
            best_max, best_y = gmax, y.copy()
        if gmax < 0.0:
            return y
    return None


def _barrier_solve(f_eval, f_grad, g_eval, g_adj, box: BoxSet, tol, max_iter, y_start):
    """Interior-point minimization of f over {g <= 0} ∩ box from a strictly
    feasible start.  ``g_adj(y, w)`` is the adjoint product jac_g(y).T @ w."""
    y = y_start
    weight = _BARRIER_WEIGHT0
    total = 0
    while True:
        def barrier_value(v, w=weight):
            g = g_eval(v)
            if np.any(g >= 0.0):
                return np.inf
            return float(f_eval(v)) - w * float(np.log(-g).sum())

        def barrier_grad(v, w=weight):
            g = g_eval(v)
            return f_grad(v) + g_adj(v, w / (-g))

        stage_tol = max(0.05 * weight, 0.1 * tol)
        res = minimize_box(barrier_value, barrier_grad, y, box.lower, box.upper, tol=stage_tol, max_iter=max_iter)
        y = res.z
        total += res.iterations
        if weight <= tol / 10.0:
            break
        weight *= _BARRIER_SHRINK
    lam = weight / (-g_eval(y))
    return y, lam, total


def _auglag_lower(f_eval, f_grad, g_eval, g_adj, box: BoxSet, tol, max_iter, y0):
    """Fallback for feasible sets without strict interior: solve the
    constrained problem by the augmented Lagrangian method and use its
    multiplier estimates as the duals."""
    opts = AugLagOptions(
        constraint_tol=tol,
        stationarity_tol=tol,
        max_major=60,
        inner_max_iter=max_iter,
        penalty0=10.0,
        stall_majors=6,
        stall_ftol=0.0,
    )
    res = minimize_auglag(
        lambda y: (float(f_eval(y)), g_eval(y)),
        lambda y, w: f_grad(y) + g_adj(y, w),
        y0,
        box.lower,
        box.upper,
        opts,
    )
    status = {
        "converged": "converged",
        "max_iter": "max_iter",
        "stalled": "max_iter",
        "no_feasible_point": "infeasible",
    }[res.status]
    return res.z, res.multipliers, res.inner_iterations, status


def _kkt_residual(y, lam, f_grad, g_eval, g_adj, box: BoxSet):
    g = g_eval(y)
    stationarity = _projected_residual(y, f_grad(y) + (g_adj(y, lam) if g.size else 0.0), box)
    complementarity = float(np.abs(lam * g).max()) if g.size else 0.0
    feasibility = float(np.maximum(g, 0.0).max()) if g.size else 0.0
    return max(stationarity, complementarity, feasibility)


def _refine_multipliers(y, lam, f_grad, g_eval, g_jac, g_adj, box: BoxSet, tol):
    """Least-squares polish of the duals on the active set.

    Barrier-recovered multipliers carry relative error ~eps/|g_i|, which is
    too coarse near active constraints at tight tolerances; re-solving the
    stationarity system for the active multipliers (nonnegative least
    squares over the box-inactive coordinates) removes that noise.  Keeps
    whichever multiplier vector has the smaller KKT residual.
    """
    g = g_eval(y)
    if g.size == 0:
        return lam
    gap = -g
    scale = 1.0 + float(np.abs(g).max())
    active = gap <= np.maximum(np.sqrt(np.maximum(lam * gap, 0.0) * scale), 1e3 * tol * scale)
    span = box.upper - box.lower
    free = (y > box.lower + 1e-9 * span) & (y < box.upper - 1e-9 * span)
    if not active.any() or not free.any():
        return lam
    J = g_jac(y)
    inactive_part = g_adj(y, np.where(active, 0.0, lam))
    rhs = -(f_grad(y) + inactive_part)[free]
    M = J[active][:, free].T
    try:
        lam_active, _ = nnls(M, rhs)
    except Exception:
        return lam
    refined = lam.copy()
    refined[active] = lam_active
    if _kkt_residual(y, refined, f_grad, g_eval, g_adj, box) < _kkt_residual(y, lam, f_grad, g_eval, g_adj, box):
        return refined
    return lam


def _finite_start(value_fn, box: BoxSet, y0):
    """First candidate start with a finite objective; lower objectives may
    contain log terms undefined on part of the box."""
    candidates = []
    if y0 is not None:
        candidates.append(box.project(np.asarray(y0, dtype=float)))
    candidates.append(box.center())
    for w in (0.75, 0.25, 0.95, 0.05):
        candidates.append(w * box.lower + (1.0 - w) * box.upper)
    for cand in candidates:
        if np.isfinite(value_fn(cand)):
            return cand
    raise SolverError("no finite-valued start found in the box")


def _solve_lower_closures(f_eval, f_grad, g_eval, g_jac, g_adj, box, tol, max_iter, y0):
    if g_eval(box.project(np.asarray(y0, dtype=float))).size == 0:
        start = _finite_start(lambda v: float(f_eval(v)), box, y0)
        res = minimize_box(lambda v: float(f_eval(v)), f_grad, start, box.lower, box.upper, tol=tol, max_iter=max_iter)
        status = "converged" if res.converged else "max_iter"
        return res.z, np.zeros(0), res.iterations, status, res.projected_grad_norm
    y_strict = _phase1_strict_point(g_eval, g_jac, box, y0)
    if y_strict is not None and np.isfinite(f_eval(y_strict)):
        y, lam, iters = _barrier_solve(f_eval, f_grad, g_eval, g_adj, box, tol, max_iter, y_strict)
        status = "converged"
    else:
        start = _finite_start(lambda v: float(f_eval(v)), box, y_strict)
        y, lam, iters, status = _auglag_lower(f_eval, f_grad, g_eval, g_adj, box, tol, max_iter, start)
    if status != "infeasible":
        lam = _refine_multipliers(y, lam, f_grad, g_eval, g_jac, g_adj, box, tol)
    kkt = _kkt_residual(y, lam, f_grad, g_eval, g_adj, box)
    if status != "infeasible":
        status = "converged" if kkt <= tol else "max_iter"
    return y, lam, iters, status, kkt


def _lower_closures(p: BilevelProblem, x):
    f, g = p.lower_objective, p.lower_constraints
    return (
        lambda y: f.eval(x, y),
        lambda y: np.asarray(f.grad_y(x, y), dtype=float),
        lambda y: np.atleast_1d(np.asarray(g.eval(x, y), dtype=float)),
        lambda y: np.atleast_2d(np.asarray(g.jac_y(x, y), dtype=float)),
        lambda y, w: np.asarray(g.jac_y_adj(x, y, w), dtype=float),
    )


def solve_lower(
    p: BilevelProblem,
    x: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> InnerSolution:
    """Solve ``min_y { f(x,y) | g(x,y) <= 0, y in Y }`` at fixed x.

    Returns the primal solution together with recovered dual multipliers.
    Block-structured problems are solved one block at a time; each block is
    an independent subproblem in its own coordinates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    f_eval, f_grad, g_eval, g_jac, g_adj = _lower_closures(p, x)

    if p.blocks is None:
        y0 = p.y_box.center()
        y, lam, iters, status, kkt = _solve_lower_closures(
            f_eval, f_grad, g_eval, g_jac, g_adj, p.y_box, tol, max_iter, y0
        )
        if status == "infeasible":
            return InnerSolution(y, np.nan, lam, "infeasible", iters, kkt)
        return InnerSolution(y, float(p.lower_objective.eval(x, y)), lam, status, iters, kkt)

    blk = p.blocks
    q = p.lower_constraints.count
    y_full = p.y_box.center().copy()
    lam_full = np.zeros(q)
    total_iters = 0
    worst_kkt = 0.0
    worst_status = "converged"
    for b in range(blk.n_blocks):
        yi = blk.y_indices(b)
        gi = blk.g_indices(b)
        box_b = BoxSet(p.y_box.lower[yi], p.y_box.upper[yi])
        work = y_full.copy()
        w_full = np.zeros(q)

        def embed(v):
            work[yi] = v
            return work

        def scatter(w):
            w_full[gi] = w
            return w_full

        fb = lambda v: f_eval(embed(v))
        fgb = lambda v: f_grad(embed(v))[yi]
        gb = lambda v: g_eval(embed(v))[gi]
        gjb = lambda v: g_jac(embed(v))[np.ix_(gi, yi)]
        gab = lambda v, w: g_adj(embed(v), scatter(w))[yi]
        y_b, lam_b, iters, status, kkt = _solve_lower_closures(
            fb, fgb, gb, gjb, gab, box_b, tol, max_iter, box_b.center()
        )
        if status == "infeasible":
            return InnerSolution(y_full, np.nan, lam_full, "infeasible", total_iters + iters, kkt)
        y_full[yi] = y_b
        lam_full[gi] = lam_b
        total_iters += iters
        worst_kkt = max(worst_kkt, kkt)
        if status == "max_iter":
            worst_status = "max_iter"
    return InnerSolution(
        y_full, float(p.lower_objective.eval(x, y_full)), lam_full, worst_status, total_iters, worst_kkt
    )


def solve_regularized_lagrangian(
    p: BilevelProblem,
    x: np.ndarray,
    lam: np.ndarray,
    mu: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    y0: Optional[np.ndarray] = None,
) -> InnerSolution:
    """Minimize ``mu*||y||^2 + f(x,y) + lam^T g(x,y)`` over the box Y only.

    This is the inner problem of the regularized dual; no g-constraints are
    imposed.  For mu > 0 (or strictly convex f) the minimizer is unique.
    """
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if lam.size and float(lam.min()) < 0:
        raise ValueError("lam must be nonnegative")
    x = np.asarray(x, dtype=float)
    f, g = p.lower_objective, p.lower_constraints

    def value(y):
        gy = g.eval(x, y)
        base = float(f.eval(x, y)) + float(lam @ gy)
        return mu * float(y @ y) + base

    def grad(y):
        return 2.0 * mu * y + np.asarray(f.grad_y(x, y), dtype=float) + np.asarray(g.jac_y_adj(x, y, lam), dtype=float)

    start = _finite_start(value, p.y_box, y0)
    res = minimize_box(value, grad, start, p.y_box.lower, p.y_box.upper, tol=tol, max_iter=max_iter)
    status = "converged" if res.converged else "max_iter"
    return InnerSolution(res.z, res.value, None, status, res.iterations, res.projected_grad_norm)
