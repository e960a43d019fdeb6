"""Self-contained validation suite: golden dual values, closed-form LP
duality, envelope gradients against finite differences, strong and weak
duality, feasible-set nesting and monotonicity in the regularization.

The CLI `check` command runs everything here and reports a machine-readable
summary.  ``inject_gradient_bug`` deliberately corrupts the gradient check
so the failure path itself can be exercised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .dbp import DbpPoint, FeasibilityTolerance, residuals
from .dual import eval_rdf, maximize_dual
from .experiments import build_interval_lp_blp
from .inner import solve_lower, solve_regularized_lagrangian
from .oracles import finite_diff_grad, is_minus_infinity, lp_ldf_closed_form
from .problem import (
    BilevelProblem,
    BoxSet,
    SmoothScalarFn,
    SmoothVectorFn,
    constant_zero_constraints,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    tolerance: float
    value: float
    detail: str


def interval_lp_dual_value(lam: np.ndarray, box_half_width: float = 2.0) -> float:
    """Closed-form dual of the unit-interval LP over a [-w, w] dual box."""
    return -box_half_width * abs(1.0 - lam[0] + lam[1]) - lam[0] - lam[1]


def random_quadratic_blp(seed: int, y_dim: int = 2, n_cons: int = 2) -> BilevelProblem:
    """A strictly convex quadratic lower level with linear constraints,
    strictly feasible near the origin, inside a generous box."""
    rng = np.random.default_rng(seed)
    x_dim = 2
    M = rng.normal(size=(y_dim, y_dim))
    Q = M.T @ M + 0.5 * np.eye(y_dim)
    B = 0.5 * rng.normal(size=(y_dim, x_dim))
    d = 0.3 * rng.normal(size=y_dim)
    A = rng.normal(size=(n_cons, y_dim))
    C = 0.2 * rng.normal(size=(n_cons, x_dim))
    b = A @ (0.1 * rng.normal(size=y_dim)) + rng.uniform(0.3, 1.0, size=n_cons)

    lower = SmoothScalarFn(
        eval=lambda x, y: float(0.5 * y @ Q @ y + (B @ x + d) @ y),
        grad_x=lambda x, y: B.T @ y,
        grad_y=lambda x, y: Q @ y + B @ x + d,
    )
    cons = SmoothVectorFn(
        eval=lambda x, y: A @ y + C @ x - b,
        jac_x=lambda x, y: C.copy(),
        jac_y=lambda x, y: A.copy(),
        count=n_cons,
    )
    upper = SmoothScalarFn(
        eval=lambda x, y: float(x @ x + y @ y),
        grad_x=lambda x, y: 2.0 * x,
        grad_y=lambda x, y: 2.0 * y,
    )
    return BilevelProblem(
        upper_objective=upper,
        upper_constraints=constant_zero_constraints(x_dim, y_dim),
        lower_objective=lower,
        lower_constraints=cons,
        y_box=BoxSet(np.full(y_dim, -5.0), np.full(y_dim, 5.0)),
        x_dim=x_dim,
        y_dim=y_dim,
    )


def check_golden_dual_values(rng_seed: int = 0) -> CheckResult:
    p = build_interval_lp_blp()
    x = np.zeros(1)
    rng = np.random.default_rng(rng_seed)
    worst = 0.0
    for _ in range(40):
        lam = rng.uniform(0.0, 3.0, size=2)
        got = eval_rdf(p, x, lam, mu=0.0).value
        worst = max(worst, abs(got - interval_lp_dual_value(lam)))
    lam_star, value = maximize_dual(p, x, mu=1e-8, tol=1e-9)
    argmax_err = float(np.abs(lam_star - np.array([1.0, 0.0])).max())
    value_err = abs(value - (-1.0))
    passed = worst <= 1e-8 and argmax_err <= 1e-4 and value_err <= 1e-6
    return CheckResult(
        "golden_dual_values", passed, 1e-8, worst,
        f"max |h - closed form| = {worst:.2e}, argmax error {argmax_err:.2e}, value error {value_err:.2e}",
    )


def check_lp_closed_form(rng_seed: int = 0) -> CheckResult:
    # the interval LP in matrix form: A = [[-1], [1]], b = [1, 1], c = [1]
    A = np.array([[-1.0], [1.0]])
    b = np.array([1.0, 1.0])
    c = np.array([1.0])
    best = -np.inf
    for lam1 in np.arange(1.0, 10.0 + 1e-12, 1e-3):
        val = lp_ldf_closed_form(A, b, c, np.array([lam1, lam1 - 1.0]), tol=1e-9)
        if not is_minus_infinity(val):
            best = max(best, val)
    p = build_interval_lp_blp()
    _, cdf_max = maximize_dual(p, np.zeros(1), mu=1e-8, tol=1e-9)
    err = abs(best - cdf_max)
    return CheckResult(
        "ldf_cdf_argmax", err <= 1e-4, 1e-4, err,
        f"closed-form max {best:.10f} vs dual max {cdf_max:.10f}",
    )


def check_rdf_gradients(rng_seed: int = 0, inject_gradient_bug: bool = False) -> CheckResult:
    worst = 0.0
    for seed in range(rng_seed, rng_seed + 8):
        p = random_quadratic_blp(seed, y_dim=1 + seed % 3)
        rng = np.random.default_rng(seed + 1000)
        x = rng.uniform(-0.5, 0.5, size=p.x_dim)
        lam = rng.uniform(0.0, 1.0, size=p.lower_constraints.count)
        for mu in (1e-6, 1e-2):
            ev = eval_rdf(p, x, lam, mu, tol=1e-11)
            grad_lambda = ev.grad_lambda * (2.0 if inject_gradient_bug else 1.0)
            fd_lam = finite_diff_grad(lambda v: eval_rdf(p, x, v, mu, tol=1e-11).value, lam, 1e-6)
            fd_x = finite_diff_grad(lambda v: eval_rdf(p, v, lam, mu, tol=1e-11).value, x, 1e-6)
            scale = max(1.0, float(np.abs(fd_lam).max()), float(np.abs(fd_x).max()))
            worst = max(
                worst,
                float(np.abs(grad_lambda - fd_lam).max()) / scale,
                float(np.abs(ev.grad_x - fd_x).max()) / scale,
            )
    return CheckResult(
        "rdf_gradients", worst <= 1e-4, 1e-4, worst,
        f"max relative envelope-gradient error {worst:.2e}",
    )


def check_strong_duality(rng_seed: int = 0) -> CheckResult:
    worst = 0.0
    for seed in range(rng_seed, rng_seed + 5):
        p = random_quadratic_blp(seed)
        x = np.random.default_rng(seed + 2000).uniform(-0.5, 0.5, size=p.x_dim)
        primal = solve_lower(p, x, tol=1e-10)
        _, dual_value = maximize_dual(p, x, mu=1e-9, tol=1e-9)
        worst = max(worst, abs(primal.value - dual_value))
    return CheckResult(
        "strong_duality", worst <= 1e-6, 1e-6, worst,
        f"max |primal - dual| = {worst:.2e}",
    )


def check_weak_duality(rng_seed: int = 0) -> CheckResult:
    worst = -np.inf
    for seed in range(rng_seed, rng_seed + 5):
        p = random_quadratic_blp(seed)
        rng = np.random.default_rng(seed + 3000)
        x = rng.uniform(-0.5, 0.5, size=p.x_dim)
        feasible = solve_lower(p, x, tol=1e-10)
        f_val = feasible.value
        for _ in range(10):
            lam = rng.uniform(0.0, 2.0, size=p.lower_constraints.count)
            h0 = eval_rdf(p, x, lam, mu=0.0, tol=1e-10).value
            worst = max(worst, h0 - f_val)
    return CheckResult(
        "weak_duality", worst <= 1e-8, 1e-8, worst,
        f"max h_0(lam) - f(feasible) = {worst:.2e}",
    )


def check_nesting(rng_seed: int = 0) -> CheckResult:
    violations = 0
    total = 0
    for seed in range(rng_seed, rng_seed + 3):
        p = random_quadratic_blp(seed)
        rng = np.random.default_rng(seed + 4000)
        for _ in range(15):
            x = rng.uniform(-0.5, 0.5, size=p.x_dim)
            base = solve_lower(p, x, tol=1e-10)
            y = base.y_star + 0.1 * rng.normal(size=p.y_dim)
            lam = np.maximum(base.multipliers + 0.1 * rng.normal(size=p.lower_constraints.count), 0.0)
            eps2, mu2 = rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.1)
            eps1 = eps2 + rng.uniform(0.0, 0.5)
            mu1 = mu2 + rng.uniform(0.0, 0.1)
            pt = DbpPoint(x=x, y=y, lam=lam)
            inner_member = residuals(p, pt, FeasibilityTolerance(eps2, mu2)).is_member()
            if inner_member:
                total += 1
                if not residuals(p, pt, FeasibilityTolerance(eps1, mu1)).is_member():
                    violations += 1
    return CheckResult(
        "feasible_set_nesting", violations == 0, 0.0, float(violations),
        f"{violations} nesting violations over {total} member points",
    )


def check_mu_monotonicity(rng_seed: int = 0) -> CheckResult:
    worst = -np.inf
    mus = (0.0, 1e-6, 1e-4, 1e-2, 1.0)
    instances = [build_interval_lp_blp()] + [random_quadratic_blp(s) for s in range(rng_seed, rng_seed + 3)]
    for idx, p in enumerate(instances):
        rng = np.random.default_rng(idx + 5000)
        for _ in range(8):
            x = rng.uniform(-0.5, 0.5, size=p.x_dim)
            lam = rng.uniform(0.0, 2.0, size=p.lower_constraints.count)
            values = [eval_rdf(p, x, lam, mu, tol=1e-11).value for mu in mus]
            for lo, hi in zip(values[:-1], values[1:]):
                worst = max(worst, lo - hi)
    return CheckResult(
        "mu_monotonicity", worst <= 1e-10, 1e-10, worst,
        f"max h_mu1 - h_mu2 over increasing mu = {worst:.2e}",
    )


def run_checks(inject_gradient_bug: bool = False, rng_seed: int = 0) -> List[CheckResult]:
    return [
        check_golden_dual_values(rng_seed),
        check_lp_closed_form(rng_seed),
        check_rdf_gradients(rng_seed, inject_gradient_bug=inject_gradient_bug),
        check_strong_duality(rng_seed),
        check_weak_duality(rng_seed),
        check_nesting(rng_seed),
        check_mu_monotonicity(rng_seed),
    ]


def summarize(results: List[CheckResult]) -> dict:
    return {
        "passed": all(r.passed for r in results),
        "checks": [
            {
                "name": r.name,
                "passed": r.passed,
                "tolerance": r.tolerance,
                "value": r.value,
                "detail": r.detail,
            }
            for r in results
        ],
    }
