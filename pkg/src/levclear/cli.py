"""Command-line front end.

Subcommands: ``calibrate`` builds a system document from balance-sheet data,
``clear`` and ``equilibrium`` solve it, ``sweep`` runs parameter grids with
replications, ``min-leverage`` searches for the smallest stable leverage cap.
Exit codes: 0 success, 2 hard solver error, 3 bad input.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import scenarios
from .calibration import CalibrationConfig, build_system, read_bank_records
from .clearing import solve_picard
from .document import document_from_config, load_system, save_system
from .equilibrium import DemandAssumptionError, solve_equilibrium
from .model import derive_relative_liabilities
from .scenarios import (
    exhaustive_leverage_threshold,
    leverage_evaluator,
    leverage_scan,
    min_safe_leverage,
    risk_metrics,
    sweep,
)
from .simplex import SimplexError
from .strategies import from_spec as strategy_from_spec

OK, SOLVER_ERROR, BAD_INPUT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise BadInput(message)


class BadInput(ValueError):
    pass


def _parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise BadInput(f"grid must look like a:b:step, got {text!r}") from exc
    if step <= 0 or hi < lo:
        raise BadInput("grid needs step > 0 and b >= a")
    count = int(round((hi - lo) / step))
    return lo + step * np.arange(count + 1)


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadInput(f"cannot read config {path}: {exc}") from exc


def _solution_payload(solution, metrics) -> dict:
    payload = {
        "payments": solution.state.payments.tolist(),
        "prices": solution.state.prices.tolist(),
        "liquidations": solution.state.liquidations.tolist(),
        "residual": solution.residual,
        "iterations": solution.iterations,
        "status": solution.status,
        "metrics": {
            "frac_defaulting": metrics.frac_defaulting,
            "frac_leverage_violating": metrics.frac_leverage_violating,
            "outside_payment_fraction": metrics.outside_payment_fraction,
        },
    }
    gap = getattr(solution, "nash_gap", None)
    if gap is not None:
        payload["nash_gap"] = float(gap) if np.isfinite(gap) else None
    return payload


def _write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_calibrate(args) -> int:
    blocks = _load_config(args.config)
    raw = dict(blocks.get("calibration", {}))
    try:
        config = CalibrationConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise BadInput(f"bad calibration block: {exc}") from exc
    try:
        records = read_bank_records(args.banks, year=config.year)
    except (OSError, ValueError) as exc:
        raise BadInput(str(exc)) from exc
    demand_spec = dict(blocks.get("inverse_demand", {"kind": "constant"}))
    demand_spec.setdefault("m", config.m)
    max_price = np.broadcast_to(
        np.asarray(demand_spec.get("max_price", 1.0), dtype=float), (config.m,))
    system = build_system(records, config, max_price)
    doc = document_from_config(system, blocks, config, records)
    save_system(doc, args.out)
    print(f"calibrated {system.n} firms, {system.m} assets -> {args.out}")
    return OK


def cmd_clear(args) -> int:
    doc = load_system(args.system)
    system = doc.system
    rl = derive_relative_liabilities(system)
    demand = doc.demand()
    strategy = strategy_from_spec(args.strategy or doc.strategy_spec)
    solver = doc.solver_spec
    solution = solve_picard(system, rl, demand, strategy,
                            tol=solver.get("tol"),
                            max_iter=int(solver.get("max_iter", 10_000)),
                            trace_path=args.trace)
    metrics = risk_metrics(solution, system, rl)
    _write_json(_solution_payload(solution, metrics), args.out)
    print(f"status={solution.status} iterations={solution.iterations} "
          f"residual={solution.residual:.3g}")
    return OK


def cmd_equilibrium(args) -> int:
    doc = load_system(args.system)
    system = doc.system
    rl = derive_relative_liabilities(system)
    demand = doc.demand()
    solver = doc.solver_spec
    solution = solve_equilibrium(system, rl, demand, tol=solver.get("tol"),
                                 max_iter=int(solver.get("max_iter", 200)),
                                 seed=args.seed)
    metrics = risk_metrics(solution, system, rl)
    _write_json(_solution_payload(solution, metrics), args.out)
    print(f"status={solution.status} iterations={solution.iterations} "
          f"nash_gap={solution.nash_gap:.3g}")
    return OK


def cmd_sweep(args) -> int:
    doc = load_system(args.system)
    grid = _parse_grid(args.grid)
    if args.param not in scenarios.SWEEP_PARAMS:
        raise BadInput(f"--param must be one of {scenarios.SWEEP_PARAMS}")
    table = sweep(doc, args.param, grid, reps=args.reps, seed=args.seed)
    scenarios.sweep_rows_to_csv(table, args.out)
    if args.agg_out:
        scenarios.aggregates_to_csv(table, args.agg_out)
    converged = sum(r.result.status == "converged" for r in table.rows)
    print(f"{len(table.rows)} rows ({converged} converged) -> {args.out}")
    return OK


def cmd_min_leverage(args) -> int:
    doc = load_system(args.system)
    rows = []
    threshold = None
    plain = (not doc.counterfactual.get("enabled")
             and doc.solver_spec.get("mode", "strategy") == "strategy")
    if args.exhaustive and plain:
        count = int(round((args.hi - args.lo) / args.step))
        grid = args.lo + args.step * np.arange(count + 1)
        system = doc.system
        rl = derive_relative_liabilities(system)
        results = leverage_scan(system, rl, doc.demand(),
                                strategy_from_spec(doc.strategy_spec), grid)
        threshold = exhaustive_leverage_threshold(results, grid)
        rows = list(zip(grid, results))
    else:
        search = min_safe_leverage(leverage_evaluator(doc, seed=args.seed),
                                   lo=args.lo, hi=args.hi, step=args.step)
        threshold = search.threshold
        rows = search.evaluated
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "frac_default", "frac_violate",
                         "outside_frac", "status", "is_threshold"])
        for lam, result in rows:
            writer.writerow([repr(float(lam)), repr(result.frac_defaulting),
                             repr(result.frac_leverage_violating),
                             repr(result.outside_payment_fraction),
                             result.status,
                             str(threshold is not None and lam == threshold).lower()])
    if threshold is None:
        print("no stable leverage cap within bounds")
    else:
        print(f"minimal acceptable leverage cap: {threshold}")
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="levclear",
                     description="fire-sale contagion clearing under leverage caps")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="build a system document from bank data")
    p.add_argument("--banks", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("clear", help="solve with a known liquidation rule")
    p.add_argument("--system", required=True)
    p.add_argument("--strategy", default=None,
                   help="kind[:epsilon], e.g. proportional or best_first:0.01")
    p.add_argument("--trace", default=None, help="CSV path for the iterate trace")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_clear)

    p = sub.add_parser("equilibrium", help="solve the liquidation game")
    p.add_argument("--system", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_equilibrium)

    p = sub.add_parser("sweep", help="grid sweep with replications")
    p.add_argument("--system", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--grid", required=True, help="a:b:step, inclusive")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--agg-out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("min-leverage", help="search the minimal stable leverage cap")
    p.add_argument("--system", required=True)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=50.0)
    p.add_argument("--step", type=float, default=0.0025)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_min_leverage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except BadInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    except (OSError, ValueError, DemandAssumptionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    except SimplexError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return SOLVER_ERROR
    except Exception as exc:  # noqa: BLE001 - the CLI contract wants exit 2 here
        print(f"solver error: {exc}", file=sys.stderr)
        return SOLVER_ERROR


if __name__ == "__main__":
    sys.exit(main())
