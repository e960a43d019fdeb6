"""Data model for bilevel programs with a convex lower level.

A problem bundles four smooth oracles (upper and lower objectives plus
their constraint maps), the compact box the partial dualization minimizes
over, and optional block structure for lower levels that decompose into
independent subproblems sharing the upper-level variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .oracles import finite_diff_grad


class ProblemError(ValueError):
    """Malformed problem definition (dimension or bound errors)."""


@dataclass(frozen=True)
class SmoothScalarFn:
    """Scalar function of (x, y) with analytic first derivatives.

    ``eval(x, y)`` returns a float; ``grad_x`` / ``grad_y`` return the
    partial gradients as 1-d arrays of the matching dimension.
    """

    eval: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_y: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SmoothVectorFn:
    """Vector-valued constraint map with analytic Jacobians.

    ``eval(x, y)`` returns a ``(count,)`` array, ``jac_x`` a
    ``(count, x_dim)`` matrix and ``jac_y`` a ``(count, y_dim)`` matrix.
    ``count`` may be zero for an unconstrained side.

    The optional ``jac_x_t_prod`` / ``jac_y_t_prod`` callables compute the
    adjoint products ``jac(x, y).T @ w`` without materializing the matrix;
    large structured problems (hundreds of sparse rows) should supply them,
    everything else can leave them unset.
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac_y: Callable[[np.ndarray, np.ndarray], np.ndarray]
    count: int
    jac_x_t_prod: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    jac_y_t_prod: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None

    def jac_x_adj(self, x, y, w) -> np.ndarray:
        if self.jac_x_t_prod is not None:
            return self.jac_x_t_prod(x, y, w)
        return np.asarray(self.jac_x(x, y), dtype=float).T @ w

    def jac_y_adj(self, x, y, w) -> np.ndarray:
        if self.jac_y_t_prod is not None:
            return self.jac_y_t_prod(x, y, w)
        return np.asarray(self.jac_y(x, y), dtype=float).T @ w


def constant_zero_constraints(x_dim: int, y_dim: int) -> SmoothVectorFn:
    """An empty (count == 0) constraint map, for unconstrained sides."""
    return SmoothVectorFn(
        eval=lambda x, y: np.zeros(0),
        jac_x=lambda x, y: np.zeros((0, x_dim)),
        jac_y=lambda x, y: np.zeros((0, y_dim)),
        count=0,
    )


@dataclass(frozen=True)
class BoxSet:
    """Componentwise bounds ``lower <= v <= upper`` with finite endpoints."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ProblemError("box bounds must be 1-d vectors of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ProblemError("box bounds must be finite (compactness)")
        if np.any(lo > hi):
            raise ProblemError("box lower bound exceeds upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)

    def contains(self, v: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def sample(self, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray:
        span = self.upper - self.lower
        return self.lower + margin * span + (1.0 - 2.0 * margin) * span * rng.uniform(size=self.dim)


@dataclass(frozen=True)
class BlockStructure:
    """Decomposition of a lower level into independent blocks.

    ``y_block[j]`` is the block owning coordinate ``y_j`` and ``g_block[i]``
    the block owning constraint component ``g_i``.  ``term_values(x, y)``
    returns the per-block objective terms (summing to the lower objective)
    and ``term_grads_x(x, y)`` their gradients with respect to x, shaped
    ``(n_blocks, x_dim)``.  Blocks must be genuinely separable: no objective
    term or constraint component may depend on another block's coordinates.
    """

    y_block: np.ndarray
    g_block: np.ndarray
    term_values: Callable[[np.ndarray, np.ndarray], np.ndarray]
    term_grads_x: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "y_block", np.asarray(self.y_block, dtype=int))
        object.__setattr__(self, "g_block", np.asarray(self.g_block, dtype=int))

    @property
    def n_blocks(self) -> int:
        return int(self.y_block.max()) + 1 if self.y_block.size else 0

    def y_indices(self, b: int) -> np.ndarray:
        return np.nonzero(self.y_block == b)[0]

    def g_indices(self, b: int) -> np.ndarray:
        return np.nonzero(self.g_block == b)[0]


@dataclass(frozen=True)
class BilevelProblem:
    """A bilevel program ``min F(x, y) s.t. G(x) <= 0, y solves the lower level``.

    The lower level is ``min_y { f(x, y) | g(x, y) <= 0, y in y_box }`` where
    ``y_box`` must contain every lower-level feasible point strictly in its
    interior; that containment is problem knowledge supplied by the caller
    and is not checked here beyond finiteness and ordering of the bounds.
    Equality constraints are expected as paired inequalities.
    """

    upper_objective: SmoothScalarFn
    upper_constraints: SmoothVectorFn
    lower_objective: SmoothScalarFn
    lower_constraints: SmoothVectorFn
    y_box: BoxSet
    x_dim: int
    y_dim: int
    blocks: Optional[BlockStructure] = None

    def __post_init__(self):
        if self.x_dim < 1 or self.y_dim < 1:
            raise ProblemError("x_dim and y_dim must be positive")
        if self.y_box.dim != self.y_dim:
            raise ProblemError(
                f"y_box has dimension {self.y_box.dim}, expected y_dim={self.y_dim}"
            )
        x0 = np.zeros(self.x_dim)
        y0 = self.y_box.center()
        self._check_scalar("upper_objective", self.upper_objective, x0, y0)
        self._check_scalar("lower_objective", self.lower_objective, x0, y0)
        self._check_vector("upper_constraints", self.upper_constraints, x0, y0)
        self._check_vector("lower_constraints", self.lower_constraints, x0, y0)
        if self.blocks is not None:
            self._check_blocks(x0, y0)

    def _check_scalar(self, name, fn, x0, y0):
        val = fn.eval(x0, y0)
        if np.ndim(val) != 0:
            raise ProblemError(f"{name}.eval must return a scalar")
        gx = np.asarray(fn.grad_x(x0, y0))
        gy = np.asarray(fn.grad_y(x0, y0))
        if gx.shape != (self.x_dim,):
            raise ProblemError(f"{name}.grad_x has shape {gx.shape}, expected ({self.x_dim},)")
        if gy.shape != (self.y_dim,):
            raise ProblemError(f"{name}.grad_y has shape {gy.shape}, expected ({self.y_dim},)")

    def _check_vector(self, name, fn, x0, y0):
        v = np.asarray(fn.eval(x0, y0))
        if v.shape != (fn.count,):
            raise ProblemError(f"{name}.eval has shape {v.shape}, expected ({fn.count},)")
        jx = np.asarray(fn.jac_x(x0, y0))
        jy = np.asarray(fn.jac_y(x0, y0))
        if jx.shape != (fn.count, self.x_dim):
            raise ProblemError(
                f"{name}.jac_x has shape {jx.shape}, expected ({fn.count}, {self.x_dim})"
            )
        if jy.shape != (fn.count, self.y_dim):
            raise ProblemError(
                f"{name}.jac_y has shape {jy.shape}, expected ({fn.count}, {self.y_dim})"
            )
        if fn.count:
            w = np.linspace(1.0, 2.0, fn.count)
            for label, adj, dense in (
                ("jac_x_t_prod", fn.jac_x_adj(x0, y0, w), jx.T @ w),
                ("jac_y_t_prod", fn.jac_y_adj(x0, y0, w), jy.T @ w),
            ):
                if np.abs(np.asarray(adj) - dense).max() > 1e-8 * (1.0 + np.abs(dense).max()):
                    raise ProblemError(f"{name}.{label} disagrees with the dense Jacobian")

    def _check_blocks(self, x0, y0):
        blk = self.blocks
        if blk.y_block.shape != (self.y_dim,):
            raise ProblemError("blocks.y_block must assign a block to every y coordinate")
        if blk.g_block.shape != (self.lower_constraints.count,):
            raise ProblemError("blocks.g_block must assign a block to every g component")
        n = blk.n_blocks
        if sorted(set(blk.y_block.tolist())) != list(range(n)):
            raise ProblemError("blocks.y_block ids must cover 0..n_blocks-1")
        terms = np.asarray(blk.term_values(x0, y0))
        if terms.shape != (n,):
            raise ProblemError(f"blocks.term_values has shape {terms.shape}, expected ({n},)")
        grads = np.asarray(blk.term_grads_x(x0, y0))
        if grads.shape != (n, self.x_dim):
            raise ProblemError(
                f"blocks.term_grads_x has shape {grads.shape}, expected ({n}, {self.x_dim})"
            )
        total = float(terms.sum())
        direct = float(self.lower_objective.eval(x0, y0))
        if abs(total - direct) > 1e-8 * (1.0 + abs(direct)):
            raise ProblemError("blocks.term_values must sum to the lower objective")


@dataclass
class OracleCheck:
    """Finite-difference agreement record for one oracle derivative."""

    oracle: str
    max_rel_error: float
    flagged: bool


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    samples: int = 0

    @property
    def ok(self) -> bool:
        return not any(c.flagged for c in self.checks)

    def worst(self) -> OracleCheck:
        return max(self.checks, key=lambda c: c.max_rel_error)


def _rel_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    analytic = np.atleast_1d(np.asarray(analytic, dtype=float))
    fd = np.atleast_1d(np.asarray(fd, dtype=float))
    if not np.isfinite(fd).all() or not np.isfinite(analytic).all():
        return np.inf
    scale = max(1.0, float(np.abs(analytic).max()), float(np.abs(fd).max()))
    return float(np.abs(analytic - fd).max()) / scale


def validate_problem(
    p: BilevelProblem,
    x_box: BoxSet,
    samples: int = 8,
    rng_seed: int = 0,
    y_box: Optional[BoxSet] = None,
    fd_step: float = 1e-6,
    flag_above: float = 1e-4,
) -> ValidationReport:
    """Check every analytic derivative against central finite differences.

    Samples ``samples`` random points with x drawn from the caller-supplied
    ``x_box`` and y from ``y_box`` (default: the problem's own box).  Pass a
    tighter ``y_box`` when the oracles are only defined on part of the full
    box.  Errors above ``flag_above`` are flagged in the report.
    """
    if samples < 1:
        raise ProblemError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    ybox = y_box if y_box is not None else p.y_box
    errors: dict[str, float] = {}

    def record(name, err):
        errors[name] = max(errors.get(name, 0.0), err)

    for _ in range(samples):
        x = x_box.sample(rng, margin=0.05)
        y = ybox.sample(rng, margin=0.05)
        for name, fn in (("upper_objective", p.upper_objective), ("lower_objective", p.lower_objective)):
            fd_x = finite_diff_grad(lambda v: fn.eval(v, y), x, fd_step)
            fd_y = finite_diff_grad(lambda v: fn.eval(x, v), y, fd_step)
            record(name + ".grad_x", _rel_error(fn.grad_x(x, y), fd_x))
            record(name + ".grad_y", _rel_error(fn.grad_y(x, y), fd_y))
        for name, fn in (("upper_constraints", p.upper_constraints), ("lower_constraints", p.lower_constraints)):
            if fn.count == 0:
                record(name + ".jac_x", 0.0)
                record(name + ".jac_y", 0.0)
                continue
            jx = np.asarray(fn.jac_x(x, y))
            jy = np.asarray(fn.jac_y(x, y))
            for i in range(fn.count):
                fd_x = finite_diff_grad(lambda v, i=i: fn.eval(v, y)[i], x, fd_step)
                fd_y = finite_diff_grad(lambda v, i=i: fn.eval(x, v)[i], y, fd_step)
                record(name + ".jac_x", _rel_error(jx[i], fd_x))
                record(name + ".jac_y", _rel_error(jy[i], fd_y))
        if p.blocks is not None:
            terms = np.asarray(p.blocks.term_values(x, y))
            record("blocks.term_values", _rel_error(terms.sum(), p.lower_objective.eval(x, y)))
            record(
                "blocks.term_grads_x",
                _rel_error(np.asarray(p.blocks.term_grads_x(x, y)).sum(axis=0), p.lower_objective.grad_x(x, y)),
            )

    report = ValidationReport(samples=samples)
    for name in sorted(errors):
        err = errors[name]
        report.checks.append(OracleCheck(oracle=name, max_rel_error=err, flagged=err > flag_above))
    return report
