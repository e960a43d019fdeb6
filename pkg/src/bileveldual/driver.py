"""Homotopy driver: alternate lower-level solves and reformulated solves
while geometrically shrinking the (epsilon, mu) tolerances.

Stage k (k = 0..K-1) solves the lower level at the incumbent x_k to get a
warm start (y_k, lam_k), then solves the reformulation at
(eps_k, mu_k) = (eps0*gamma^k, mu0*zeta^k) from that start, and keeps the
returned x even when its upper objective is worse than the incumbent's
(both values are visible in the report).  There is no stopping test beyond
the K stages.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .dbp import (
    DbpPoint,
    FeasibilityTolerance,
    NoFeasiblePointError,
    SolverOptions,
    residuals,
    solve_dbp,
)
from .dual import maximize_dual
from .inner import solve_lower
from .problem import BilevelProblem

_RESTORATION_MU_FLOOR = 1e-12


class DriverError(RuntimeError):
    """Unrecoverable failure inside the homotopy loop."""


@dataclass(frozen=True)
class DriverConfig:
    """Schedule parameters: start point, initial tolerances, shrink factors
    and stage count.  zeta = 1 (no mu shrinking) is allowed; it is what the
    reference experiments use."""

    x0: np.ndarray
    epsilon0: float = 1.0
    mu0: float = 1e-4
    gamma: float = 0.1
    zeta: float = 1.0
    K: int = 3

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        if self.epsilon0 <= 0:
            raise ValueError("epsilon0 must be positive")
        if self.mu0 < 0:
            raise ValueError("mu0 must be nonnegative")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if not (0.0 < self.zeta <= 1.0):
            raise ValueError("zeta must lie in (0, 1]")
        if self.K < 1:
            raise ValueError("K must be a positive integer")


@dataclass
class IterationRow:
    k: int
    epsilon: float
    mu: float
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    objective: float
    max_residual: float
    inner_iterations: int
    wall_time: float


@dataclass
class SolveReport:
    iterations: List[IterationRow] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


def run(
    p: BilevelProblem,
    cfg: DriverConfig,
    opts: Optional[SolverOptions] = None,
) -> Tuple[np.ndarray, SolveReport]:
    """Run the full homotopy and return (x_final, report)."""
    opts = opts or SolverOptions()
    report = SolveReport()
    x = cfg.x0.copy()
    eps, mu = cfg.epsilon0, cfg.mu0

    for k in range(cfg.K):
        stage_start = time.perf_counter()
        tol = FeasibilityTolerance(epsilon=eps, mu=mu)

        lower = solve_lower(p, x, tol=opts.rdf_tol * 100.0, max_iter=opts.rdf_max_iter)
        if lower.status == "infeasible":
            raise DriverError(f"lower level infeasible at stage {k} (x = {x})")
        start = DbpPoint(x=x, y=lower.y_star, lam=lower.multipliers)

        start_res = residuals(p, start, tol, rdf_tol=opts.rdf_tol)
        if float(start_res.duality_gap.max()) > 0.0:
            # the recovered duals leave the gap constraint violated at this
            # tolerance; restore with one dual maximization
            lam_restored, _ = maximize_dual(p, x, max(mu, _RESTORATION_MU_FLOOR), tol=opts.rdf_tol * 10.0)
            start = DbpPoint(x=x, y=lower.y_star, lam=lam_restored)
            start_res = residuals(p, start, tol, rdf_tol=opts.rdf_tol)
            if start_res.max_violation() > opts.constraint_tol:
                report.warnings.append(
                    f"stage {k}: start still violates constraints by {start_res.max_violation():.3e} after restoration"
                )

        try:
            point, record = solve_dbp(p, start, tol, opts)
        except NoFeasiblePointError as exc:
            report.warnings.append(f"stage {k}: reformulated solve failed ({exc}); keeping x")
            eps *= cfg.gamma
            mu *= cfg.zeta
            continue

        prev_obj = float(p.upper_objective.eval(start.x, start.y))
        if record.objective > prev_obj:
            report.warnings.append(
                f"stage {k}: objective rose from {prev_obj:.6g} to {record.objective:.6g}; keeping new iterate"
            )
        x = point.x.copy()
        report.iterations.append(
            IterationRow(
                k=k,
                epsilon=eps,
                mu=mu,
                x=point.x.copy(),
                y=point.y.copy(),
                lam=point.lam.copy(),
                objective=record.objective,
                max_residual=record.max_residual,
                inner_iterations=record.inner_iterations,
                wall_time=time.perf_counter() - stage_start,
            )
        )
        eps *= cfg.gamma
        mu *= cfg.zeta

    return x, report
