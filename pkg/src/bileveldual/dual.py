"""The regularized constrained dual function and its envelope gradients.

``h_mu(lam, x)`` is the minimum of ``mu*||y||^2 + f(x,y) + lam^T g(x,y)``
over the compact box Y.  At a unique minimizer ybar the function is
differentiable and the gradients are read off the Lagrangian itself:
``grad_x = grad_x f(x, ybar) + lam^T jac_x g(x, ybar)`` and
``grad_lambda = g(x, ybar)``.  With mu = 0 and a non-singleton minimizer
set the same formulas still return a valid subgradient element; callers
needing true gradients must pass mu > 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .inner import DEFAULT_MAX_ITER, DEFAULT_TOL, solve_regularized_lagrangian
from .problem import BilevelProblem
from .solvers import minimize_box


@dataclass
class DualEval:
    """Value, minimizer and envelope gradients of h_mu at one (lam, x)."""

    value: float
    minimizer: np.ndarray
    grad_x: np.ndarray
    grad_lambda: np.ndarray
    mu: float
    block_values: Optional[np.ndarray] = None


def block_dual_values(p: BilevelProblem, x, lam, mu, ybar) -> np.ndarray:
    """Per-block dual values at the joint minimizer of a separable problem.

    For a block-separable lower level the joint minimum splits as a sum; the
    block values are the per-block regularization, objective term and
    multiplier-weighted constraints evaluated at ybar.
    """
    blk = p.blocks
    g_vals = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, ybar), dtype=float))
    reg = np.bincount(blk.y_block, weights=mu * ybar * ybar, minlength=blk.n_blocks)
    lag = np.bincount(blk.g_block, weights=lam * g_vals, minlength=blk.n_blocks)
    terms = np.asarray(blk.term_values(x, ybar), dtype=float)
    return reg + terms + lag


def eval_rdf(
    p: BilevelProblem,
    x: np.ndarray,
    lam: np.ndarray,
    mu: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    y0: Optional[np.ndarray] = None,
) -> DualEval:
    """Evaluate h_mu(lam, x) together with its envelope gradients."""
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    sol = solve_regularized_lagrangian(p, x, lam, mu, tol=tol, max_iter=max_iter, y0=y0)
    ybar = sol.y_star
    grad_x = np.asarray(p.lower_objective.grad_x(x, ybar), dtype=float) + np.asarray(
        p.lower_constraints.jac_x_adj(x, ybar, lam), dtype=float
    )
    grad_lambda = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, ybar), dtype=float))
    block_values = block_dual_values(p, x, lam, mu, ybar) if p.blocks is not None else None
    return DualEval(sol.value, ybar, grad_x, grad_lambda, mu, block_values)


def maximize_dual(
    p: BilevelProblem,
    x: np.ndarray,
    mu: float,
    tol: float = 1e-7,
    max_iter: int = DEFAULT_MAX_ITER,
    inner_tol: float = 1e-11,
) -> Tuple[np.ndarray, float]:
    """Maximize ``h_mu(., x)`` over ``lam >= 0`` by projected ascent.

    Requires mu > 0 so the dual is differentiable; the gradient at lam is
    ``g(x, ybar(lam))``.  Steps use Barzilai-Borwein initialization with
    backtracking, starting from lam = 0.  Returns (lam_star, value).
    """
    if mu <= 0:
        raise ValueError("maximize_dual requires mu > 0 for differentiability")
    x = np.asarray(x, dtype=float)
    q = p.lower_constraints.count
    cache = {"key": None, "value": None, "grad": None, "y": None}

    def solve_at(lam):
        key = lam.tobytes()
        if cache["key"] != key:
            sol = solve_regularized_lagrangian(p, x, lam, mu, tol=inner_tol, y0=cache["y"])
            grad = np.atleast_1d(np.asarray(p.lower_constraints.eval(x, sol.y_star), dtype=float))
            cache.update(key=key, value=sol.value, grad=grad, y=sol.y_star)
        return cache["value"], cache["grad"]

    def neg_value(lam):
        value, _ = solve_at(lam)
        return -value

    def neg_grad(lam):
        _, grad = solve_at(lam)
        return -grad

    res = minimize_box(
        neg_value, neg_grad, np.zeros(q), np.zeros(q), np.full(q, np.inf), tol=tol, max_iter=max_iter
    )
    return res.z, -res.value
