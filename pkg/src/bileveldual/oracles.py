"""Independent brute-force and closed-form oracles used by tests and checks.

Everything here is desk-scale by design: exhaustive grids of at most 1e7
points and coordinate-wise central differences.  These routines stay
deliberately independent of the solver code they are used to verify.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

GRID_SIZE_CAP = 10_000_000


class GridTooLargeError(ValueError):
    """Requested grid exceeds the desk-scale point cap."""


class _MinusInfinity:
    """Distinguished extended-real value, kept out of float arithmetic."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MINUS_INFINITY"


MINUS_INFINITY = _MinusInfinity()

ExtendedReal = Union[float, _MinusInfinity]


def is_minus_infinity(value: ExtendedReal) -> bool:
    return value is MINUS_INFINITY


@dataclass(frozen=True)
class GridSpec:
    """Per-dimension (lower, upper, step) triples defining a search grid."""

    axes: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(tuple(map(float, a)) for a in self.axes))
        for lo, hi, step in self.axes:
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError("grid bounds must be finite")
            if step <= 0:
                raise ValueError("grid step must be positive")
            if hi < lo:
                raise ValueError("grid upper bound below lower bound")
        if self.size() > GRID_SIZE_CAP:
            raise GridTooLargeError(f"grid has {self.size()} points, cap is {GRID_SIZE_CAP}")

    def axis_points(self, i: int) -> np.ndarray:
        lo, hi, step = self.axes[i]
        n = int(np.floor((hi - lo) / step + 1e-9)) + 1
        pts = lo + step * np.arange(n)
        # keep the upper endpoint even when the step does not divide the range
        if pts[-1] < hi - 1e-12 * max(1.0, abs(hi)):
            pts = np.append(pts, hi)
        return pts

    def size(self) -> int:
        total = 1
        for i in range(len(self.axes)):
            lo, hi, step = self.axes[i]
            total *= int(np.floor((hi - lo) / step + 1e-9)) + 2
        return total


def grid_minimize(fn: Callable[[np.ndarray], float], grid: GridSpec):
    """Exhaustively scan ``grid`` and return ``(point, value)``.

    Ties are broken by returning the first minimizer in lexicographic axis
    order, which makes the result deterministic.
    """
    axes = [grid.axis_points(i) for i in range(len(grid.axes))]
    best_point = None
    best_value = np.inf
    for combo in itertools.product(*axes):
        point = np.array(combo)
        value = float(fn(point))
        if value < best_value:
            best_value = value
            best_point = point
    return best_point, best_value


def lp_ldf_closed_form(
    A: np.ndarray,
    b: np.ndarray,
    c: np.ndarray,
    lam: np.ndarray,
    tol: float = 1e-9,
) -> ExtendedReal:
    """Closed-form Lagrangian dual of ``min { c^T y | A y - b <= 0 }``.

    Returns ``-b^T lam`` when ``A^T lam = -c`` (within ``tol``) and
    ``lam >= 0``; otherwise the distinguished ``MINUS_INFINITY`` value.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if A.shape != (b.size, c.size) or lam.size != b.size:
        raise ValueError("inconsistent LP dimensions")
    if np.any(lam < -tol):
        return MINUS_INFINITY
    if np.abs(A.T @ lam + c).max() > tol:
        return MINUS_INFINITY
    return float(-b @ lam)


def finite_diff_grad(fn: Callable[[np.ndarray], float], point: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=float)
    grad = np.zeros(point.size)
    for i in range(point.size):
        forward = point.copy()
        backward = point.copy()
        forward[i] += step
        backward[i] -= step
        grad[i] = (float(fn(forward)) - float(fn(backward))) / (2.0 * step)
    return grad
