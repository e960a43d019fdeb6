"""Command-line front end.

Subcommands: ``invopt`` and ``stackelberg`` run the two experiment sweeps
and write CSV/JSON result tables, ``solve`` runs the homotopy on a single
instance and writes its iteration report, ``check`` runs the validation
suite and exits nonzero on any failure.

Config files are flat ``key = value`` text; unknown keys are rejected.
Command-line flags (--seed, --out, --jobs) override config values.  All
floats in CSV output are printed with 17 significant digits so repeated
runs with the same seed produce byte-identical files (timing columns are
the only nondeterministic output).

Exit codes: 0 success, 1 check failure, 2 config error, 3 solver hard
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import experiments
from .checks import run_checks, summarize
from .dbp import SolverOptions
from .driver import DriverConfig, DriverError, run

EXIT_OK = 0
EXIT_CHECK_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_FAILURE = 3

_DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


class ConfigError(ValueError):
    """Bad configuration file or option value."""


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_float_list(raw: str) -> tuple:
    try:
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated floats, got {raw!r}") from exc


# key -> (parser, default); None default means "required by command logic"
_COMMON_KEYS = {
    "seed": (int, 0),
    "out": (str, None),
    "format": (str, "csv"),
    "jobs": (int, 1),
    "epsilon0": (float, 1.0),
    "mu0": (float, 1e-4),
    "gamma": (float, 0.1),
    "zeta": (float, 1.0),
    "K": (int, 3),
    "constraint_tol": (float, 1e-6),
    "stationarity_tol": (float, 1e-5),
    "max_major": (int, 50),
    "inner_max_iter": (int, 400),
    "rdf_tol": (float, 1e-10),
}

_COMMAND_KEYS = {
    "invopt": {"count": (int, 200), "n": (int, 100), "noiseless": (_parse_bool, False)},
    "stackelberg": {"alphas": (_parse_float_list, _DEFAULT_GRID), "phis": (_parse_float_list, _DEFAULT_GRID)},
    "solve": {"problem": (str, "invopt"), "n": (int, 1), "alpha": (float, 0.5), "phi": (float, 0.5)},
    "check": {"inject_gradient_bug": (_parse_bool, False)},
}

_DEFAULT_OUT = {
    "invopt": "invopt_results.csv",
    "stackelberg": "stackelberg_results.csv",
    "solve": "solve_report.csv",
    "check": None,
}


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def driver_fields(self) -> dict:
        return {k: self.values[k] for k in ("epsilon0", "mu0", "gamma", "zeta", "K")}

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            constraint_tol=self.values["constraint_tol"],
            stationarity_tol=self.values["stationarity_tol"],
            max_major=self.values["max_major"],
            inner_max_iter=self.values["inner_max_iter"],
            rdf_tol=self.values["rdf_tol"],
        )


def parse_config_file(path: Optional[str]) -> dict:
    raw = {}
    if path is None:
        return raw
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def build_run_config(command: str, raw: dict, overrides: dict) -> RunConfig:
    schema = dict(_COMMON_KEYS)
    schema.update(_COMMAND_KEYS[command])
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    values = {}
    for key, (parser, default) in schema.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r}") from exc
        else:
            values[key] = default
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    if values["out"] is None:
        values["out"] = _DEFAULT_OUT[command]
    _validate_ranges(command, values)
    return RunConfig(command=command, values=values)


def _validate_ranges(command: str, v: dict):
    if v["format"] not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    if v["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    if v["epsilon0"] <= 0:
        raise ConfigError("epsilon0 must be positive")
    if v["mu0"] < 0:
        raise ConfigError("mu0 must be nonnegative")
    if not (0.0 < v["gamma"] < 1.0):
        raise ConfigError("gamma must lie in (0, 1)")
    if not (0.0 < v["zeta"] <= 1.0):
        raise ConfigError("zeta must lie in (0, 1]")
    if v["K"] < 1:
        raise ConfigError("K must be >= 1")
    if command == "invopt":
        if v["count"] < 0:
            raise ConfigError("count must be >= 0")
        if v["n"] < 1:
            raise ConfigError("n must be >= 1")
    if command == "stackelberg":
        for key in ("alphas", "phis"):
            for value in v[key]:
                if key == "alphas" and not (0.0 <= value <= 1.0):
                    raise ConfigError("alphas must lie in [0, 1]")
                if key == "phis" and not (0.0 < value < 1.0):
                    raise ConfigError("phis must lie in (0, 1)")
    if command == "solve" and v["problem"] not in ("invopt", "stackelberg"):
        raise ConfigError("problem must be 'invopt' or 'stackelberg'")


def _format_cell(value) -> str:
    if isinstance(value, float) or isinstance(value, np.floating):
        return f"{float(value):.17g}"
    return str(value)


def write_rows(path: str, columns, rows: List[dict], fmt: str):
    out = Path(path)
    if fmt == "csv":
        lines = [",".join(columns)]
        for row in rows:
            lines.append(",".join(_format_cell(row[c]) for c in columns))
        out.write_text("\n".join(lines) + "\n")
    else:
        payload = [{c: (float(row[c]) if isinstance(row[c], np.floating) else row[c]) for c in columns} for row in rows]
        out.write_text(json.dumps(payload, indent=1) + "\n")


def _invopt_task(kwargs: dict) -> dict:
    return experiments.run_invopt_instance(**kwargs)


def _stackelberg_task(kwargs: dict) -> dict:
    return experiments.run_stackelberg_cell(**kwargs)


def _map_ordered(worker, tasks, jobs: int):
    # instances are independent; results are collected in submission order
    # so the output is identical whatever the completion order
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, tasks))
    return [worker(task) for task in tasks]


def cmd_invopt(cfg: RunConfig) -> int:
    opts = cfg.solver_options()
    driver_fields = cfg.driver_fields()
    tasks = [
        dict(instance_id=i, n=cfg.n, seed=cfg.seed + i,
             driver_fields=driver_fields, opts=opts, noiseless=cfg.noiseless)
        for i in range(cfg.count)
    ]
    rows = _map_ordered(_invopt_task, tasks, cfg.jobs)
    write_rows(cfg.out, experiments.INVOPT_COLUMNS, rows, cfg.format)
    return EXIT_OK


def cmd_stackelberg(cfg: RunConfig) -> int:
    opts = cfg.solver_options()
    driver_fields = cfg.driver_fields()
    tasks = [
        dict(alpha=alpha, phi=phi, driver_fields=driver_fields, opts=opts)
        for alpha in cfg.alphas
        for phi in cfg.phis
    ]
    rows = _map_ordered(_stackelberg_task, tasks, cfg.jobs)
    write_rows(cfg.out, experiments.STACKELBERG_COLUMNS, rows, cfg.format)
    return EXIT_OK


_SOLVE_COLUMNS = ("k", "epsilon", "mu", "objective", "max_residual", "inner_iterations", "x", "wall_ms")


def cmd_solve(cfg: RunConfig) -> int:
    opts = cfg.solver_options()
    if cfg.problem == "invopt":
        inst = experiments.gen_invopt(cfg.n, cfg.seed)
        problem = experiments.build_invopt_blp(inst)
        x0 = np.array([float(np.random.default_rng([cfg.seed, 1]).uniform(-1.0, 1.0))])
    else:
        inst = experiments.RoutingInstance(alpha=cfg.alpha, phi=cfg.phi)
        problem = experiments.build_stackelberg_blp(inst)
        x0 = experiments.scale_strategy(inst)
    driver_cfg = experiments.driver_config_for(x0, cfg.driver_fields())
    x_final, report = run(problem, driver_cfg, opts)
    rows = []
    for it in report.iterations:
        rows.append(
            {
                "k": it.k,
                "epsilon": it.epsilon,
                "mu": it.mu,
                "objective": it.objective,
                "max_residual": it.max_residual,
                "inner_iterations": it.inner_iterations,
                "x": " ".join(f"{v:.17g}" for v in it.x),
                "wall_ms": 1e3 * it.wall_time,
            }
        )
    write_rows(cfg.out, _SOLVE_COLUMNS, rows, cfg.format)
    print(f"final x: {' '.join(f'{v:.17g}' for v in x_final)}")
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    results = run_checks(inject_gradient_bug=cfg.inject_gradient_bug, rng_seed=cfg.seed)
    summary = summarize(results)
    text = json.dumps(summary, indent=1)
    print(text)
    if cfg.out is not None:
        Path(cfg.out).write_text(text + "\n")
    return EXIT_OK if summary["passed"] else EXIT_CHECK_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bilevel-dual",
        description="Duality-based solver and experiments for bilevel programs with convex lower levels",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("invopt", "run the inverse-optimization experiment sweep"),
        ("stackelberg", "run the Stackelberg routing experiment grid"),
        ("solve", "solve a single instance and write its iteration report"),
        ("check", "run the validation suite (exit 1 on failure)"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="flat key = value config file")
        cmd.add_argument("--seed", type=int, default=None, help="override the base seed")
        cmd.add_argument("--out", default=None, help="override the output path")
        cmd.add_argument("--jobs", type=int, default=None, help="parallel instances (default 1)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = parse_config_file(args.config)
        cfg = build_run_config(
            args.command, raw, {"seed": args.seed, "out": args.out, "jobs": args.jobs}
        )
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    handler = {
        "invopt": cmd_invopt,
        "stackelberg": cmd_stackelberg,
        "solve": cmd_solve,
        "check": cmd_check,
    }[cfg.command]
    try:
        return handler(cfg)
    except DriverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    except Exception as exc:  # noqa: BLE001 - hard failures map to exit code 3
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
