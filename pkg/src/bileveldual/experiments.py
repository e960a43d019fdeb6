"""Reference experiment instances and metrics.

Two families are built here: an inverse-optimization estimation problem
(n independent one-dimensional followers responding to signals, sharing a
scalar parameter x) and a two-edge Stackelberg routing game (a leader
controlling an alpha fraction of the inflow, followers settling at a Nash
equilibrium of the convex routing potential).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .dbp import SolverOptions
from .driver import DriverConfig, SolveReport, run
from .inner import solve_lower
from .problem import (
    BilevelProblem,
    BlockStructure,
    BoxSet,
    SmoothScalarFn,
    SmoothVectorFn,
    constant_zero_constraints,
)

INVOPT_Y_BOX = (-2.0, 2.0)
ROUTING_Y_BOX = (-1.0, 2.0)


@dataclass(frozen=True)
class InvOptInstance:
    """Signals u, noisy responses z and the generating parameter theta0
    (kept for evaluation only)."""

    n: int
    u: np.ndarray
    z: np.ndarray
    theta0: float

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        if self.u.shape != (self.n,) or self.z.shape != (self.n,):
            raise ValueError("u and z must have length n")
        if np.abs(self.u).max() > 1.0 + 1e-12:
            raise ValueError("signals must lie in [-1, 1]")
        if not (-1.0 <= self.theta0 <= 1.0):
            raise ValueError("theta0 must lie in [-1, 1]")


@dataclass(frozen=True)
class RoutingInstance:
    """Leader fraction alpha in [0, 1] and total inflow phi in (0, 1)."""

    alpha: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if not (0.0 < self.phi < 1.0):
            raise ValueError("phi must lie in (0, 1): the bottom edge delay diverges at flow 1")


def gen_invopt(n: int, seed: int, noiseless: bool = False) -> InvOptInstance:
    """Generate one estimation instance, deterministic per seed.

    theta0 and the signals are uniform on [-1, 1]; each exact response
    minimizes ``(theta0 + u_i) * y`` over [-1, 1] (ties broken toward -1)
    and the observations add standard normal noise, unclipped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    theta0 = float(rng.uniform(-1.0, 1.0))
    u = rng.uniform(-1.0, 1.0, size=n)
    noise = rng.standard_normal(n)
    slope = theta0 + u
    xi = np.where(slope > 0.0, -1.0, np.where(slope < 0.0, 1.0, -1.0))
    z = xi if noiseless else xi + noise
    return InvOptInstance(n=n, u=u, z=z.copy(), theta0=theta0)


def exact_responses(inst: InvOptInstance, x: float) -> np.ndarray:
    """Responses of all followers to parameter x (ties toward -1)."""
    slope = x + inst.u
    return np.where(slope > 0.0, -1.0, np.where(slope < 0.0, 1.0, -1.0))


def build_invopt_blp(inst: InvOptInstance) -> BilevelProblem:
    """Assemble the estimation problem as one block-separable bilevel program.

    Upper level: mean squared distance between observations and responses,
    with x confined to [-1, 1].  Each follower i minimizes
    ``(x + u_i) * y_i`` over [-1, 1], written as two inequality rows per
    follower; the dual box for every follower is [-2, 2].
    """
    n = inst.n
    u = inst.u
    z = inst.z

    upper = SmoothScalarFn(
        eval=lambda x, y: float(np.mean((z - y) ** 2)),
        grad_x=lambda x, y: np.zeros(1),
        grad_y=lambda x, y: 2.0 * (y - z) / n,
    )
    upper_cons = SmoothVectorFn(
        eval=lambda x, y: np.array([x[0] - 1.0, -x[0] - 1.0]),
        jac_x=lambda x, y: np.array([[1.0], [-1.0]]),
        jac_y=lambda x, y: np.zeros((2, n)),
        count=2,
    )
    lower = SmoothScalarFn(
        eval=lambda x, y: float((x[0] + u) @ y),
        grad_x=lambda x, y: np.array([y.sum()]),
        grad_y=lambda x, y: x[0] + u,
    )

    def g_eval(x, y):
        out = np.empty(2 * n)
        out[0::2] = -y - 1.0
        out[1::2] = y - 1.0
        return out

    def g_jac_y(x, y):
        J = np.zeros((2 * n, n))
        idx = np.arange(n)
        J[2 * idx, idx] = -1.0
        J[2 * idx + 1, idx] = 1.0
        return J

    lower_cons = SmoothVectorFn(
        eval=g_eval,
        jac_x=lambda x, y: np.zeros((2 * n, 1)),
        jac_y=g_jac_y,
        count=2 * n,
        jac_x_t_prod=lambda x, y, w: np.zeros(1),
        jac_y_t_prod=lambda x, y, w: w[1::2] - w[0::2],
    )
    blocks = BlockStructure(
        y_block=np.arange(n),
        g_block=np.repeat(np.arange(n), 2),
        term_values=lambda x, y: (x[0] + u) * y,
        term_grads_x=lambda x, y: y[:, None].copy(),
    )
    lo, hi = INVOPT_Y_BOX
    return BilevelProblem(
        upper_objective=upper,
        upper_constraints=upper_cons,
        lower_objective=lower,
        lower_constraints=lower_cons,
        y_box=BoxSet(np.full(n, lo), np.full(n, hi)),
        x_dim=1,
        y_dim=n,
        blocks=blocks,
    )


def build_interval_lp_blp(lo: float = -1.0, hi: float = 1.0, box=(-2.0, 2.0)) -> BilevelProblem:
    """A one-follower linear program on an interval with a trivial upper level.

    Lower level: ``min { y | lo - y <= 0, y - hi <= 0 }`` with dual box
    ``box``.  Used by the golden-value checks: the dual function of the
    default instance is ``-2*|1 - lam1 + lam2| - lam1 - lam2`` and its
    maximizer over the nonnegative orthant is (1, 0).
    """
    upper = SmoothScalarFn(
        eval=lambda x, y: 0.0,
        grad_x=lambda x, y: np.zeros(1),
        grad_y=lambda x, y: np.zeros(1),
    )
    lower = SmoothScalarFn(
        eval=lambda x, y: float(y[0]),
        grad_x=lambda x, y: np.zeros(1),
        grad_y=lambda x, y: np.ones(1),
    )
    lower_cons = SmoothVectorFn(
        eval=lambda x, y: np.array([lo - y[0], y[0] - hi]),
        jac_x=lambda x, y: np.zeros((2, 1)),
        jac_y=lambda x, y: np.array([[-1.0], [1.0]]),
        count=2,
    )
    return BilevelProblem(
        upper_objective=upper,
        upper_constraints=constant_zero_constraints(1, 1),
        lower_objective=lower,
        lower_constraints=lower_cons,
        y_box=BoxSet(np.array([box[0]]), np.array([box[1]])),
        x_dim=1,
        y_dim=1,
    )


def build_stackelberg_blp(inst: RoutingInstance) -> BilevelProblem:
    """Assemble the two-edge routing game.

    x = leader flows (top, bottom), y = follower flows.  The upper level
    minimizes total average delay subject to the leader's budget
    ``x1 + x2 = alpha*phi`` (paired inequalities) and ``x >= 0``.  The
    followers minimize the routing potential subject to ``y >= 0`` and the
    flow balance ``y1 + y2 = (1-alpha)*phi`` as paired inequalities, so the
    multiplier block is (lam1, lam2, nu+, nu-) with the free equality
    multiplier split into a difference of nonnegative parts.
    """
    alpha, phi = inst.alpha, inst.phi
    budget = alpha * phi
    follower_flow = (1.0 - alpha) * phi

    def delay_total(x, y):
        s = x[1] + y[1]
        if s >= 1.0:
            return np.inf
        return float(x[0] + y[0] + (1.0 - phi) * s / (1.0 - s))

    def delay_grad_edge(x, y):
        s = x[1] + y[1]
        return (1.0 - phi) / (1.0 - s) ** 2

    upper = SmoothScalarFn(
        eval=delay_total,
        grad_x=lambda x, y: np.array([1.0, delay_grad_edge(x, y)]),
        grad_y=lambda x, y: np.array([1.0, delay_grad_edge(x, y)]),
    )
    upper_cons = SmoothVectorFn(
        eval=lambda x, y: np.array([x[0] + x[1] - budget, budget - x[0] - x[1], -x[0], -x[1]]),
        jac_x=lambda x, y: np.array([[1.0, 1.0], [-1.0, -1.0], [-1.0, 0.0], [0.0, -1.0]]),
        jac_y=lambda x, y: np.zeros((4, 2)),
        count=4,
    )

    def potential(x, y):
        s = x[1] + y[1]
        if s >= 1.0:
            return np.inf
        return float(x[0] + y[0] - (1.0 - phi) * np.log(1.0 - s))

    def potential_grad_edge(x, y):
        s = x[1] + y[1]
        return (1.0 - phi) / (1.0 - s)

    lower = SmoothScalarFn(
        eval=potential,
        grad_x=lambda x, y: np.array([1.0, potential_grad_edge(x, y)]),
        grad_y=lambda x, y: np.array([1.0, potential_grad_edge(x, y)]),
    )
    lower_cons = SmoothVectorFn(
        eval=lambda x, y: np.array(
            [-y[0], -y[1], y[0] + y[1] - follower_flow, follower_flow - y[0] - y[1]]
        ),
        jac_x=lambda x, y: np.zeros((4, 2)),
        jac_y=lambda x, y: np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0], [-1.0, -1.0]]),
        count=4,
    )
    lo, hi = ROUTING_Y_BOX
    return BilevelProblem(
        upper_objective=upper,
        upper_constraints=upper_cons,
        lower_objective=lower,
        lower_constraints=lower_cons,
        y_box=BoxSet(np.full(2, lo), np.full(2, hi)),
        x_dim=2,
        y_dim=2,
    )


def full_flow_social_cost(phi: float, bottom: float) -> float:
    """Average delay when a total flow phi is split with ``bottom`` on the
    congested edge and the rest on the unit-delay edge."""
    return (phi - bottom) + (1.0 - phi) * bottom / (1.0 - bottom)


def social_optimum(phi: float, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Socially optimal split of the full flow phi by 1-d convex minimization."""
    res = minimize_scalar(
        lambda b: full_flow_social_cost(phi, b), bounds=(0.0, phi), method="bounded",
        options={"xatol": tol},
    )
    bottom = float(res.x)
    return np.array([phi - bottom, bottom]), float(res.fun)


def scale_strategy(inst: RoutingInstance, tol: float = 1e-12) -> np.ndarray:
    """The scaled social optimum: alpha times the full-flow optimal split."""
    x_full, _ = social_optimum(inst.phi, tol)
    return inst.alpha * x_full


def average_delay(inst: RoutingInstance, leader_x: np.ndarray, tol: float = 1e-8) -> float:
    """Average delay of a leader strategy against the followers' equilibrium."""
    leader_x = _validated_leader(inst, leader_x, tol)
    p = build_stackelberg_blp(inst)
    nash = solve_lower(p, leader_x, tol=min(tol, 1e-8))
    if nash.status == "infeasible":
        raise RuntimeError("follower equilibrium solve failed")
    return float(p.upper_objective.eval(leader_x, nash.y_star))


def price_of_anarchy(inst: RoutingInstance, leader_x: np.ndarray, tol: float = 1e-8) -> float:
    """Average delay of the strategy divided by the full-control optimum."""
    numerator = average_delay(inst, leader_x, tol)
    _, denominator = social_optimum(inst.phi)
    return numerator / denominator


def _validated_leader(inst: RoutingInstance, leader_x, tol) -> np.ndarray:
    leader_x = np.atleast_1d(np.asarray(leader_x, dtype=float))
    budget = inst.alpha * inst.phi
    if abs(leader_x.sum() - budget) > max(1e-5, 10.0 * tol) * (1.0 + budget):
        raise ValueError(f"leader flow sums to {leader_x.sum():.6g}, expected {budget:.6g}")
    if leader_x.min() < -1e-6:
        raise ValueError("leader flow must be nonnegative")
    return np.maximum(leader_x, 0.0)


INVOPT_COLUMNS = (
    "instance_id", "seed", "theta0", "x0", "theta_hat",
    "mse_init", "mse_final", "wall_ms", "status",
)

STACKELBERG_COLUMNS = (
    "alpha", "phi", "poa_scale", "poa_dual",
    "delay_scale", "delay_dual", "delay_opt", "wall_ms", "status",
)


def driver_config_for(x0, cfg_fields: dict) -> DriverConfig:
    return DriverConfig(
        x0=x0,
        epsilon0=cfg_fields.get("epsilon0", 1.0),
        mu0=cfg_fields.get("mu0", 1e-4),
        gamma=cfg_fields.get("gamma", 0.1),
        zeta=cfg_fields.get("zeta", 1.0),
        K=cfg_fields.get("K", 3),
    )


def run_invopt_instance(
    instance_id: int,
    n: int,
    seed: int,
    driver_fields: dict,
    opts: Optional[SolverOptions] = None,
    noiseless: bool = False,
) -> dict:
    """Solve one estimation instance end to end and return a result row."""
    t0 = time.perf_counter()
    inst = gen_invopt(n, seed, noiseless=noiseless)
    x0 = float(np.random.default_rng([seed, 1]).uniform(-1.0, 1.0))
    row = {
        "instance_id": instance_id,
        "seed": seed,
        "theta0": inst.theta0,
        "x0": x0,
        "theta_hat": np.nan,
        "mse_init": (x0 - inst.theta0) ** 2,
        "mse_final": np.nan,
        "wall_ms": 0.0,
        "status": "ok",
    }
    try:
        p = build_invopt_blp(inst)
        cfg = driver_config_for(np.array([x0]), driver_fields)
        x_final, report = run(p, cfg, opts)
        row["theta_hat"] = float(x_final[0])
        row["mse_final"] = (row["theta_hat"] - inst.theta0) ** 2
        if report.warnings:
            row["status"] = "warn:" + report.warnings[-1].split(":")[0]
    except Exception as exc:  # per-instance failures are recorded, not raised
        row["status"] = f"error:{type(exc).__name__}"
    row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
    return row


def run_stackelberg_cell(
    alpha: float,
    phi: float,
    driver_fields: dict,
    opts: Optional[SolverOptions] = None,
) -> dict:
    """Solve one (alpha, phi) cell: SCALE baseline, then the duality-based
    strategy initialized at SCALE, both scored by price of anarchy."""
    t0 = time.perf_counter()
    row = {
        "alpha": alpha, "phi": phi,
        "poa_scale": np.nan, "poa_dual": np.nan,
        "delay_scale": np.nan, "delay_dual": np.nan, "delay_opt": np.nan,
        "wall_ms": 0.0, "status": "ok",
    }
    try:
        inst = RoutingInstance(alpha=alpha, phi=phi)
        _, delay_opt = social_optimum(phi)
        x_scale = scale_strategy(inst)
        delay_scale = average_delay(inst, x_scale)
        p = build_stackelberg_blp(inst)
        cfg = driver_config_for(x_scale, driver_fields)
        x_dual, report = run(p, cfg, opts)
        x_dual = _validated_leader(inst, x_dual, 1e-6)
        delay_dual = average_delay(inst, x_dual)
        row.update(
            poa_scale=delay_scale / delay_opt,
            poa_dual=delay_dual / delay_opt,
            delay_scale=delay_scale,
            delay_dual=delay_dual,
            delay_opt=delay_opt,
        )
        if report.warnings:
            row["status"] = "warn:" + report.warnings[-1].split(":")[0]
    except Exception as exc:
        row["status"] = f"error:{type(exc).__name__}"
    row["wall_ms"] = 1e3 * (time.perf_counter() - t0)
    return row
