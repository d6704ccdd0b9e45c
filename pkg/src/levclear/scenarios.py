"""End-to-end experiments: risk proxies, threshold searches, parameter sweeps.

Three systemic-risk proxies summarize a solved scenario: the fraction of
firms defaulting on part of their obligations, the fraction violating their
leverage cap (equivalently, forced to liquidate everything they own), and
the fraction of obligations to the outside economy actually paid.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import _backend
from .calibration import apply_leverage_counterfactual, apply_shock, build_system
from .clearing import CONVERGED, default_tol, kernel_eligible, solve_picard
from .document import SystemDocument
from .equilibrium import solve_equilibrium
from .model import (
    FinancialSystem,
    RelativeLiabilities,
    derive_relative_liabilities,
    liquidation_requirements,
    portfolio_values,
)
from .strategies import LiquidationStrategy, from_spec as strategy_from_spec

SWEEP_PARAMS = ("alpha", "pin", "prob", "sigma", "beta", "leverage")
SWEEP_HEADER = ["param", "rep", "frac_default", "frac_violate", "outside_frac",
                "status", "interpolated"]
MISSING = "missing"


@dataclass
class ScenarioResult:
    """The three risk proxies plus solve diagnostics for one parameterization."""

    frac_defaulting: float
    frac_leverage_violating: float
    outside_payment_fraction: float
    status: str
    interpolated: bool = False

    @property
    def metrics(self) -> tuple[float, float, float]:
        return (self.frac_defaulting, self.frac_leverage_violating,
                self.outside_payment_fraction)


def classification_tol(system: FinancialSystem) -> float:
    """Default/violation classification needs slack above the solver residual."""
    return 1e-6 * (1.0 + float(system.liabilities.sum(axis=1).max()))


def metrics_from_state(payments, prices, system, rl, status,
                       tol: Optional[float] = None) -> ScenarioResult:
    if tol is None:
        tol = classification_tol(system)
    obligations = rl.total[1:]
    defaulting = payments[1:] < obligations - tol
    required = liquidation_requirements(payments, prices, rl, system)
    violating = required > portfolio_values(prices, system) + tol
    outside_weights = rl.relative[1:, 0]
    denom = float(outside_weights @ obligations)
    if denom > 0:
        outside = float(outside_weights @ payments[1:]) / denom
    else:
        outside = 1.0
    return ScenarioResult(
        frac_defaulting=float(defaulting.mean()),
        frac_leverage_violating=float(violating.mean()),
        outside_payment_fraction=outside,
        status=status,
    )


def risk_metrics(solution, system: FinancialSystem, rl: RelativeLiabilities,
                 tol: Optional[float] = None) -> ScenarioResult:
    """Proxies for a ClearingSolution or EquilibriumSolution."""
    return metrics_from_state(solution.state.payments, solution.state.prices,
                              system, rl, solution.status, tol)


# -- fast uniform-leverage scans ----------------------------------------------

def leverage_scan(system: FinancialSystem, rl: RelativeLiabilities, demand,
                  strategy: LiquidationStrategy, lambdas, tol=None,
                  max_iter: int = 10_000, backend: str = "auto") -> list[ScenarioResult]:
    """Greatest-fixed-point metrics for each uniform leverage-cap value."""
    lambdas = np.asarray(lambdas, dtype=float)
    if tol is None:
        tol = default_tol(system, rl, demand.max_price)
    use_kernel = backend != "python" and kernel_eligible(demand, strategy)
    if use_kernel:
        code, packed, offsets, units, prices_tab = demand.kernel_spec()
        grid = lambdas.shape[0]
        p_grid = np.zeros((grid, system.n + 1))
        q_grid = np.zeros((grid, system.m))
        iters = np.zeros(grid, dtype=np.int64)
        statuses = np.zeros(grid, dtype=np.int64)
        residuals = np.zeros(grid)
        _backend.kernels.scan_leverage(
            np.ascontiguousarray(rl.total), np.ascontiguousarray(rl.relative),
            np.ascontiguousarray(system.liquid), np.ascontiguousarray(system.illiquid),
            lambdas, strategy.kernel_code(), code,
            np.ascontiguousarray(packed), offsets, units, prices_tab,
            np.ascontiguousarray(demand.max_price), float(tol), int(max_iter),
            p_grid, q_grid, iters, statuses, residuals)
        out = []
        names = (CONVERGED, "max_iter", "oscillating")
        for g, lam in enumerate(lambdas):
            variant = system.with_leverage_cap(lam)
            out.append(metrics_from_state(p_grid[g], q_grid[g], variant, rl,
                                          names[statuses[g]]))
        return out
    out = []
    for lam in lambdas:
        variant = system.with_leverage_cap(lam)
        solution = solve_picard(variant, rl, demand, strategy, tol=tol,
                                max_iter=max_iter)
        out.append(risk_metrics(solution, variant, rl))
    return out


# -- minimal acceptable leverage ----------------------------------------------

@dataclass
class LeverageThreshold:
    threshold: Optional[float]            # None: no stable grid point in bounds
    evaluated: list                       # (lambda, ScenarioResult) pairs
    exhaustive: bool = False


def _stable_predicate(name: str) -> Callable[[ScenarioResult], bool]:
    if name == "no_defaults":
        return lambda r: r.frac_defaulting == 0.0
    if name == "full_outside_payment":
        return lambda r: r.outside_payment_fraction >= 1.0 - 1e-12
    raise ValueError(f"unknown stability predicate: {name!r}")


def min_safe_leverage(evaluate: Callable[[float], ScenarioResult],
                      lo: float = 0.0, hi: float = 50.0, step: float = 0.0025,
                      predicate: str = "no_defaults",
                      scan_points: int = 65) -> LeverageThreshold:
    """Smallest leverage-cap grid point at which the system is stable.

    Expects stability to be monotone in the cap over [lo, hi]; endpoints are
    checked first, and when they fail to bracket a transition a coarse scan
    hunts for one before bisection refines it on the grid.
    """
    stable = _stable_predicate(predicate)
    count = int(round((hi - lo) / step))
    grid = lo + step * np.arange(count + 1)
    seen: dict[int, ScenarioResult] = {}

    def at(idx: int) -> ScenarioResult:
        if idx not in seen:
            seen[idx] = evaluate(float(grid[idx]))
        return seen[idx]

    def finish(threshold):
        evaluated = [(float(grid[i]), seen[i]) for i in sorted(seen)]
        return LeverageThreshold(threshold, evaluated)

    if stable(at(0)):
        return finish(float(grid[0]))
    if not stable(at(len(grid) - 1)):
        # endpoints claim no transition; scan coarsely before giving up
        probes = np.unique(np.linspace(0, len(grid) - 1, scan_points).astype(int))
        stable_probes = [i for i in probes if stable(at(i))]
        if not stable_probes:
            return finish(None)
        first = stable_probes[0]
        below = max(i for i in probes if i < first)
        lo_i, hi_i = below, first
    else:
        lo_i, hi_i = 0, len(grid) - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if stable(at(mid)):
            hi_i = mid
        else:
            lo_i = mid
    return finish(float(grid[hi_i]))


def exhaustive_leverage_threshold(results: list[ScenarioResult], grid,
                                  predicate: str = "no_defaults") -> Optional[float]:
    """Threshold from a full-grid scan: the point after the last unstable one."""
    stable = _stable_predicate(predicate)
    flags = [stable(r) for r in results]
    if all(flags):
        return float(grid[0])
    last_bad = max(i for i, ok in enumerate(flags) if not ok)
    if last_bad == len(grid) - 1:
        return None
    return float(grid[last_bad + 1])


# -- parameter sweeps -----------------------------------------------------------

@dataclass
class SweepRow:
    param: float
    rep: int
    result: ScenarioResult


@dataclass
class SweepAggregate:
    param: float
    mean: tuple
    q05: tuple
    q95: tuple
    count: int


@dataclass
class SweepTable:
    param_name: str
    rows: list[SweepRow]
    aggregates: list[SweepAggregate]


def _rep_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def _solve_variant(doc: SystemDocument, system: FinancialSystem, *,
                   seed: int) -> ScenarioResult:
    rl = derive_relative_liabilities(system)
    demand = doc.demand(system)
    solver = doc.solver_spec
    tol = solver.get("tol")
    max_iter = int(solver.get("max_iter", 10_000))
    if solver.get("mode", "strategy") == "equilibrium":
        solution = solve_equilibrium(system, rl, demand, tol=tol,
                                     max_iter=min(max_iter, 500), seed=seed)
    else:
        strategy = strategy_from_spec(doc.strategy_spec)
        solution = solve_picard(system, rl, demand, strategy, tol=tol,
                                max_iter=max_iter)
    return risk_metrics(solution, system, rl)


def _variant_system(doc: SystemDocument, param: str, value: float,
                    rep_seed: int) -> FinancialSystem:
    if param in ("alpha", "pin", "prob", "sigma"):
        if doc.config is None or not doc.records:
            raise ValueError(f"sweeping {param!r} needs the calibration config "
                             "and bank records in the system document")
        fields = {"alpha": "alpha", "pin": "max_interbank_fraction",
                  "prob": "connection_prob", "sigma": "sigma"}
        cfg = replace(doc.config, seed=rep_seed, **{fields[param]: float(value)})
        return build_system(doc.records, cfg, doc.max_price)
    base = doc.system
    cf = doc.counterfactual
    if param == "beta":
        if cf.get("enabled"):
            adjusted = apply_leverage_counterfactual(
                base, derive_relative_liabilities(base), doc.max_price,
                base.leverage_cap,
                asset_mode=doc.config.counterfactual_asset_mode if doc.config
                else "proportional")
            base = adjusted.system
        return apply_shock(base, float(value))
    if param == "leverage":
        capped = base.with_leverage_cap(float(value))
        if cf.get("enabled"):
            adjusted = apply_leverage_counterfactual(
                capped, derive_relative_liabilities(capped), doc.max_price,
                float(value),
                asset_mode=doc.config.counterfactual_asset_mode if doc.config
                else "proportional")
            return apply_shock(adjusted.system, float(cf.get("beta", 0.0)))
        return capped
    raise ValueError(f"unknown sweep parameter {param!r}; "
                     f"expected one of {SWEEP_PARAMS}")


def _interpolate(rows: list[SweepRow]) -> None:
    """Fill non-converged points per rep by linear interpolation in the parameter.

    A point with a converged neighbor on each side gets each proxy blended
    linearly and is flagged; anything else stays as an explicit missing row.
    """
    by_rep: dict[int, list[SweepRow]] = {}
    for row in rows:
        by_rep.setdefault(row.rep, []).append(row)
    for series in by_rep.values():
        series.sort(key=lambda r: r.param)
        good = [i for i, r in enumerate(series) if r.result.status == CONVERGED]
        for i, row in enumerate(series):
            if row.result.status == CONVERGED:
                continue
            left = max((g for g in good if g < i), default=None)
            right = min((g for g in good if g > i), default=None)
            if left is None or right is None:
                row.result = replace(row.result,
                                     frac_defaulting=np.nan,
                                     frac_leverage_violating=np.nan,
                                     outside_payment_fraction=np.nan,
                                     status=MISSING, interpolated=False)
                continue
            a, b = series[left], series[right]
            span = b.param - a.param
            w = 0.0 if span == 0 else (row.param - a.param) / span
            blended = tuple((1.0 - w) * x + w * y
                            for x, y in zip(a.result.metrics, b.result.metrics))
            row.result = replace(row.result,
                                 frac_defaulting=blended[0],
                                 frac_leverage_violating=blended[1],
                                 outside_payment_fraction=blended[2],
                                 interpolated=True)


def _aggregate(rows: list[SweepRow]) -> list[SweepAggregate]:
    by_param: dict[float, list[SweepRow]] = {}
    for row in rows:
        by_param.setdefault(row.param, []).append(row)
    out = []
    for param in sorted(by_param):
        data = np.array([r.result.metrics for r in by_param[param]
                         if np.isfinite(r.result.metrics).all()])
        if data.size == 0:
            out.append(SweepAggregate(param, (np.nan,) * 3, (np.nan,) * 3,
                                      (np.nan,) * 3, 0))
            continue
        out.append(SweepAggregate(
            param,
            tuple(data.mean(axis=0)),
            tuple(np.quantile(data, 0.05, axis=0)),
            tuple(np.quantile(data, 0.95, axis=0)),
            data.shape[0],
        ))
    return out


def sweep(doc: SystemDocument, param: str, grid, reps: int = 1,
          seed: int = 0) -> SweepTable:
    """One ScenarioResult per grid point and replication, plus band aggregates.

    Replication seeds derive from ``(seed, rep)`` only, so a replication sees
    the same random draws at every grid point (common random numbers across
    the grid).  Results come back in grid-then-rep order regardless of how
    they were computed.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("sweep grid must be nonempty")
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; "
                         f"expected one of {SWEEP_PARAMS}")
    rows = []
    for rep in range(reps):
        rep_seed = _rep_seed(seed, rep)
        for value in grid:
            system = _variant_system(doc, param, float(value), rep_seed)
            result = _solve_variant(doc, system, seed=rep_seed)
            rows.append(SweepRow(float(value), rep, result))
    _interpolate(rows)
    rows.sort(key=lambda r: (r.param, r.rep))
    return SweepTable(param, rows, _aggregate(rows))


def leverage_evaluator(doc: SystemDocument, *, seed: int = 0) -> Callable[[float], ScenarioResult]:
    """Closure mapping a uniform leverage cap to its scenario metrics."""
    def evaluate(lam: float) -> ScenarioResult:
        system = _variant_system(doc, "leverage", lam, _rep_seed(seed, 0))
        return _solve_variant(doc, system, seed=_rep_seed(seed, 0))
    return evaluate


def sweep_rows_to_csv(table: SweepTable, path) -> None:
    """Pinned CSV contract: param,rep,frac_default,frac_violate,outside_frac,status,interpolated."""
    import csv

    def fmt(x: float) -> str:
        return "" if not np.isfinite(x) else repr(float(x))

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        for row in table.rows:
            r = row.result
            writer.writerow([repr(row.param), row.rep, fmt(r.frac_defaulting),
                             fmt(r.frac_leverage_violating),
                             fmt(r.outside_payment_fraction), r.status,
                             str(r.interpolated).lower()])


def aggregates_to_csv(table: SweepTable, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "count",
                         "mean_default", "mean_violate", "mean_outside",
                         "q05_default", "q05_violate", "q05_outside",
                         "q95_default", "q95_violate", "q95_outside"])
        for agg in table.aggregates:
            writer.writerow([repr(agg.param), agg.count,
                             *(repr(float(v)) for v in agg.mean),
                             *(repr(float(v)) for v in agg.q05),
                             *(repr(float(v)) for v in agg.q95)])
