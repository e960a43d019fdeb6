"""Single-level reformulation: minimize F over the duality-based feasible
set {G(x) <= 0, g(x,y) <= eps, lam >= 0, f(x,y) - h_mu(lam,x) <= eps}.

The gap constraint's gradient uses the envelope formulas, so no nested
differentiation is ever needed; one dual evaluation per (x, lam) is cached
and shared between the value and gradient paths.  Block-separable lower
levels get one gap constraint per block (each block is an independent
follower sharing x), which is both tighter and better scaled than a single
summed gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .dual import block_dual_values, maximize_dual
from .inner import solve_regularized_lagrangian
from .problem import BilevelProblem
from .solvers import AugLagOptions, SolverError, minimize_auglag


class DbpError(RuntimeError):
    """DBP solve failed outright."""


class NoFeasiblePointError(DbpError):
    """Not even the start point could be restored to feasibility."""


@dataclass(frozen=True)
class FeasibilityTolerance:
    """The (epsilon, mu) pair parameterizing the relaxed feasible set."""

    epsilon: float
    mu: float

    def __post_init__(self):
        if self.epsilon < 0 or self.mu < 0:
            raise ValueError("epsilon and mu must be nonnegative")

    def require_positive(self):
        if self.epsilon <= 0 or self.mu <= 0:
            raise ValueError("solver entry requires epsilon > 0 and mu > 0")


@dataclass
class DbpPoint:
    """A candidate (x, y, lam) with lam kept nonnegative by projection."""

    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_1d(np.asarray(self.y, dtype=float))
        self.lam = np.maximum(np.atleast_1d(np.asarray(self.lam, dtype=float)), 0.0)


@dataclass
class ConstraintResiduals:
    """Signed residuals of every constraint defining the feasible set.

    Membership holds exactly when all components are <= 0.  ``duality_gap``
    has one entry per lower-level block (a single entry for unstructured
    problems), matching the per-follower gap constraints used by the solver.
    """

    upper: np.ndarray
    lower_feas: np.ndarray
    duality_gap: np.ndarray
    lambda_neg: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.upper, self.lower_feas, self.duality_gap, self.lambda_neg])

    def max_violation(self) -> float:
        stacked = self.stacked()
        return float(stacked.max()) if stacked.size else 0.0

    def is_member(self, tol: float = 0.0) -> bool:
        return self.max_violation() <= tol


@dataclass
class SolverOptions:
    """Options for the augmented Lagrangian outer solver.

    The solve alternates full augmented Lagrangian passes on (x, y, lam)
    with fixed-x refresh steps that re-maximize the dual and re-optimize y
    (the reformulation is convex when x is fixed, so the refresh never
    worsens the incumbent); ``coordinate_rounds`` bounds those alternations
    and ``round_max_major`` the majors spent per pass.
    """

    constraint_tol: float = 1e-6
    stationarity_tol: float = 1e-5
    max_major: int = 50
    inner_max_iter: int = 400
    penalty0: float = 10.0
    rdf_tol: float = 1e-10
    rdf_max_iter: int = 500
    coordinate_rounds: int = 6
    round_max_major: int = 8
    round_x_tol: float = 1e-7

    def auglag(self, max_major: Optional[int] = None) -> AugLagOptions:
        return AugLagOptions(
            constraint_tol=self.constraint_tol,
            stationarity_tol=self.stationarity_tol,
            max_major=min(self.max_major, max_major) if max_major else self.max_major,
            inner_max_iter=self.inner_max_iter,
            penalty0=self.penalty0,
        )


@dataclass
class DbpSolveRecord:
    """Per-solve diagnostics carried into the homotopy report."""

    objective: float
    max_residual: float
    stationarity: float
    status: str
    major_iterations: int
    inner_iterations: int
    rdf_solves: int
    wall_time: float
    history: list = field(default_factory=list)


def residuals(
    p: BilevelProblem,
    pt: DbpPoint,
    tol: FeasibilityTolerance,
    rdf_tol: float = 1e-10,
) -> ConstraintResiduals:
    """Exact residual evaluation at a point, with a fresh dual evaluation."""
    x, y, lam = pt.x, pt.y, pt.lam
    upper = np.atleast_1d(np.asarray(p.upper_constraints.eval(x, y), dtype=float))
    g_vals = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, y), dtype=float))
    sol = solve_regularized_lagrangian(p, x, lam, tol.mu, tol=rdf_tol)
    if p.blocks is None:
        f_val = float(p.lower_objective.eval(x, y))
        gap = np.array([f_val - sol.value - tol.epsilon])
    else:
        h_blocks = block_dual_values(p, x, lam, tol.mu, sol.y_star)
        f_blocks = np.asarray(p.blocks.term_values(x, y), dtype=float)
        gap = f_blocks - h_blocks - tol.epsilon
    return ConstraintResiduals(
        upper=upper,
        lower_feas=g_vals - tol.epsilon,
        duality_gap=gap,
        lambda_neg=-lam,
    )


class _DbpAssembler:
    """Packs (x, y, lam) into one vector and serves the augmented Lagrangian
    value/gradient callbacks, caching one dual solve per (x, lam)."""

    def __init__(self, p: BilevelProblem, tol: FeasibilityTolerance, opts: SolverOptions):
        self.p = p
        self.eps = tol.epsilon
        self.mu = tol.mu
        self.opts = opts
        self.nx, self.ny = p.x_dim, p.y_dim
        self.nlam = p.lower_constraints.count
        self.n_gap = p.blocks.n_blocks if p.blocks is not None else 1
        self.rdf_solves = 0
        self._cache_key = None
        self._cache = None
        self._warm_y = None
        self._values_key = None
        self._values_out = None

    def split(self, z):
        x = z[: self.nx]
        y = z[self.nx : self.nx + self.ny]
        lam = z[self.nx + self.ny :]
        return x, y, lam

    def pack(self, pt: DbpPoint):
        return np.concatenate([pt.x, pt.y, pt.lam])

    def bounds(self):
        n = self.nx + self.ny + self.nlam
        lower = np.full(n, -np.inf)
        lower[self.nx + self.ny :] = 0.0
        return lower, np.full(n, np.inf)

    def _dual(self, x, lam):
        key = (x.tobytes(), lam.tobytes())
        if self._cache_key != key:
            sol = solve_regularized_lagrangian(
                self.p, x, lam, self.mu, tol=self.opts.rdf_tol,
                max_iter=self.opts.rdf_max_iter, y0=self._warm_y,
            )
            self.rdf_solves += 1
            self._warm_y = sol.y_star
            ybar = sol.y_star
            g_at_ybar = np.atleast_1d(np.asarray(self.p.lower_constraints.eval(x, ybar), dtype=float))
            if self.p.blocks is None:
                h_blocks = np.array([sol.value])
            else:
                h_blocks = block_dual_values(self.p, x, lam, self.mu, ybar)
            self._cache_key = key
            self._cache = (ybar, h_blocks, g_at_ybar)
        return self._cache

    def values(self, z) -> Tuple[float, np.ndarray]:
        key = z.tobytes()
        if self._values_key == key:
            return self._values_out
        out = self._values(z)
        self._values_key = key
        self._values_out = out
        return out

    def _values(self, z) -> Tuple[float, np.ndarray]:
        p = self.p
        x, y, lam = self.split(z)
        f_upper = float(p.upper_objective.eval(x, y))
        if not np.isfinite(f_upper):
            return np.inf, np.full(p.upper_constraints.count + self.nlam + self.n_gap, np.inf)
        g_upper = np.atleast_1d(np.asarray(p.upper_constraints.eval(x, y), dtype=float))
        g_lower = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, y), dtype=float))
        try:
            _, h_blocks, _ = self._dual(x, lam)
        except SolverError:
            # dual undefined at this trial x (domain cliff): reject the step
            return np.inf, np.full(p.upper_constraints.count + self.nlam + self.n_gap, np.inf)
        if p.blocks is None:
            f_low = float(p.lower_objective.eval(x, y))
            gap = np.array([f_low - h_blocks[0] - self.eps])
        else:
            f_blocks = np.asarray(p.blocks.term_values(x, y), dtype=float)
            gap = f_blocks - h_blocks - self.eps
        c = np.concatenate([g_upper, g_lower - self.eps, gap])
        return f_upper, c

    def grad_lagrangian(self, z, w) -> np.ndarray:
        """``grad F + jac(c).T @ w`` without materializing the Jacobian.

        The gap rows use the envelope formulas: their x-derivative is
        ``grad_x f(x, y) - [grad_x f(x, ybar) + lam^T jac_x g(x, ybar)]``,
        their y-derivative ``grad_y f(x, y)`` and their lam-derivative
        ``-g(x, ybar)``, all evaluated at the cached dual minimizer.
        """
        p = self.p
        x, y, lam = self.split(z)
        n_up = p.upper_constraints.count
        w_up = w[:n_up]
        w_low = w[n_up : n_up + self.nlam]
        w_gap = w[n_up + self.nlam :]

        gx = np.asarray(p.upper_objective.grad_x(x, y), dtype=float)
        gy = np.asarray(p.upper_objective.grad_y(x, y), dtype=float)
        if n_up:
            gx = gx + np.asarray(p.upper_constraints.jac_x_adj(x, y, w_up), dtype=float)
        if self.nlam:
            gx = gx + np.asarray(p.lower_constraints.jac_x_adj(x, y, w_low), dtype=float)
            gy = gy + np.asarray(p.lower_constraints.jac_y_adj(x, y, w_low), dtype=float)

        ybar, _, g_at_ybar = self._dual(x, lam)
        grad_y_f = np.asarray(p.lower_objective.grad_y(x, y), dtype=float)
        if p.blocks is None:
            w0 = w_gap[0]
            grad_x_gap = np.asarray(p.lower_objective.grad_x(x, y), dtype=float) - (
                np.asarray(p.lower_objective.grad_x(x, ybar), dtype=float)
                + np.asarray(p.lower_constraints.jac_x_adj(x, ybar, lam), dtype=float)
            )
            gx = gx + w0 * grad_x_gap
            gy = gy + w0 * grad_y_f
            glam = -w0 * g_at_ybar
        else:
            blk = p.blocks
            tx_y = np.asarray(blk.term_grads_x(x, y), dtype=float)
            tx_ybar = np.asarray(blk.term_grads_x(x, ybar), dtype=float)
            gx = gx + (tx_y - tx_ybar).T @ w_gap
            gx = gx - np.asarray(
                p.lower_constraints.jac_x_adj(x, ybar, w_gap[blk.g_block] * lam), dtype=float
            )
            gy = gy + grad_y_f * w_gap[blk.y_block]
            glam = -g_at_ybar * w_gap[blk.g_block]
        return np.concatenate([gx, gy, glam])

    def refresh(self, z) -> np.ndarray:
        """Fixed-x improvement: re-maximize the dual (the widest feasible
        set over y is obtained at the dual argmax, so this never shrinks
        it), then re-optimize y in the resulting convex problem.  Returns a
        point whose upper objective is no worse than the input's."""
        p = self.p
        x, y, lam = self.split(z)
        f_old, c_old = self.values(z)
        viol_old = float(np.maximum(c_old, 0.0).max()) if c_old.size else 0.0
        try:
            lam_star, _ = maximize_dual(
                p, x, self.mu, tol=max(1e-9, 100.0 * self.opts.rdf_tol),
                inner_tol=self.opts.rdf_tol,
            )
        except SolverError:
            return z
        _, h_blocks, _ = self._dual(x, lam_star)
        h_blocks = h_blocks.copy()
        eps = self.eps
        blk = p.blocks

        def y_values(yv):
            f_upper = float(p.upper_objective.eval(x, yv))
            if not np.isfinite(f_upper):
                return np.inf, np.full(self.nlam + self.n_gap, np.inf)
            g_lower = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, yv), dtype=float))
            if blk is None:
                gap = np.array([float(p.lower_objective.eval(x, yv)) - h_blocks[0] - eps])
            else:
                gap = np.asarray(blk.term_values(x, yv), dtype=float) - h_blocks - eps
            return f_upper, np.concatenate([g_lower - eps, gap])

        def y_grad_lagrangian(yv, w):
            w_low = w[: self.nlam]
            w_gap = w[self.nlam :]
            gy = np.asarray(p.upper_objective.grad_y(x, yv), dtype=float)
            if self.nlam:
                gy = gy + np.asarray(p.lower_constraints.jac_y_adj(x, yv, w_low), dtype=float)
            grad_y_f = np.asarray(p.lower_objective.grad_y(x, yv), dtype=float)
            if blk is None:
                gy = gy + w_gap[0] * grad_y_f
            else:
                gy = gy + grad_y_f * w_gap[blk.y_block]
            return gy

        al = AugLagOptions(
            constraint_tol=self.opts.constraint_tol,
            stationarity_tol=self.opts.stationarity_tol,
            max_major=10,
            inner_max_iter=self.opts.inner_max_iter,
        )
        free = np.full(self.ny, np.inf)
        try:
            res = minimize_auglag(y_values, y_grad_lagrangian, y, -free, free, al)
        except SolverError:
            return z
        z_new = np.concatenate([x, res.z, lam_star])
        f_new, c_new = self.values(z_new)
        viol_new = float(np.maximum(c_new, 0.0).max()) if c_new.size else 0.0
        worse_value = f_new > f_old + 1e-12 * (1.0 + abs(f_old))
        worse_feasibility = viol_new > max(viol_old, self.opts.constraint_tol)
        if res.status == "no_feasible_point" or worse_value or worse_feasibility:
            return z
        return z_new


def solve_dbp(
    p: BilevelProblem,
    start: DbpPoint,
    tol: FeasibilityTolerance,
    opts: Optional[SolverOptions] = None,
) -> Tuple[DbpPoint, DbpSolveRecord]:
    """Solve the reformulated problem from a (near-)feasible start.

    Raises ``NoFeasiblePointError`` when no iterate, the start included,
    satisfies the constraints to ``opts.constraint_tol``.  On hitting the
    iteration budget the best feasible iterate found is returned;
    feasibility is prioritized over stationarity.
    """
    tol.require_positive()
    opts = opts or SolverOptions()
    asm = _DbpAssembler(p, tol, opts)
    z = asm.pack(start)
    lower, upper = asm.bounds()
    t0 = time.perf_counter()

    f0, c0 = asm.values(z)
    viol0 = float(np.maximum(c0, 0.0).max()) if c0.size else 0.0
    best = (z.copy(), f0, viol0) if viol0 <= opts.constraint_tol else None

    history = []
    inner_total = 0
    majors_total = 0
    stationarity = np.inf
    status = "max_iter"
    x_prev = None
    for _ in range(opts.coordinate_rounds):
        z = asm.refresh(z)
        res = minimize_auglag(
            asm.values, asm.grad_lagrangian, z, lower, upper,
            asm.opts.auglag(opts.round_max_major),
        )
        inner_total += res.inner_iterations
        majors_total += res.major_iterations
        history.extend(res.history)
        stationarity = res.stationarity
        status = res.status
        if res.status != "no_feasible_point" and res.violation <= opts.constraint_tol:
            if best is None or res.value < best[1]:
                best = (res.z.copy(), res.value, res.violation)
        z = res.z_last if res.z_last is not None else res.z
        x_now = asm.split(z)[0]
        if x_prev is not None and float(np.abs(x_now - x_prev).max()) <= opts.round_x_tol:
            break
        x_prev = x_now.copy()
    wall = time.perf_counter() - t0

    if best is None:
        raise NoFeasiblePointError(
            f"no feasible point found (best violation > {opts.constraint_tol:.1e})"
        )
    z_best, f_best, viol_best = best
    x, y, lam = asm.split(z_best)
    pt = DbpPoint(x=x, y=y, lam=lam)
    record = DbpSolveRecord(
        objective=f_best,
        max_residual=viol_best,
        stationarity=stationarity,
        status="converged" if status == "converged" else status,
        major_iterations=majors_total,
        inner_iterations=inner_total,
        rdf_solves=asm.rdf_solves,
        wall_time=wall,
        history=history,
    )
    return pt, record
