"""The clearing map and its fixed points for a known liquidation rule.

One application of the map pays every firm the smaller of its obligations
and its marked-to-market assets, reprices the illiquid assets through the
inverse demand at the aggregate units sold, and records the sales the rule
dictates.  Solving iterates the map from the all-obligations-honored point;
for nonincreasing rules the iterates descend to the greatest fixed point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _backend
from .demand import InverseDemand
from .model import ClearingState, FinancialSystem, RelativeLiabilities, incoming_payments
from .strategies import LiquidationStrategy, liquidate

CONVERGED = "converged"
MAX_ITER = "max_iter"
OSCILLATING = "oscillating"

_HISTORY = 8          # states remembered for cycle detection
_DAMPING_RETRY = 0.5  # relaxation factor used after a detected oscillation


@dataclass
class ClearingSolution:
    """A fixed-point candidate plus the evidence for (or against) it."""

    state: ClearingState
    residual: float
    iterations: int
    status: str

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def default_tol(system: FinancialSystem, rl: RelativeLiabilities, max_price) -> float:
    scale = max(float(rl.total.max()), float(np.max(max_price)))
    return 1e-8 * (1.0 + scale)


def clearing_step(state: ClearingState, system: FinancialSystem,
                  rl: RelativeLiabilities, demand: InverseDemand,
                  strategy: LiquidationStrategy) -> ClearingState:
    """One application of the clearing map at the given state."""
    if demand.m != system.m:
        raise ValueError("demand map and system disagree on the asset count")
    sales = liquidate(strategy, state, rl, system)
    sold = np.minimum(system.illiquid, sales).sum(axis=0)
    new_prices = demand.evaluate(sold)
    assets = (system.liquid + system.illiquid @ state.prices
              + incoming_payments(state.payments, rl))
    new_payments = np.zeros_like(state.payments)
    new_payments[1:] = np.minimum(rl.total[1:], assets)
    return ClearingState(new_payments, new_prices, sales)


def residual(state: ClearingState, system, rl, demand, strategy) -> float:
    """Max-norm distance between the state and its image under the map."""
    nxt = clearing_step(state, system, rl, demand, strategy)
    return float(max(np.abs(nxt.payments - state.payments).max(),
                     np.abs(nxt.prices - state.prices).max()))


def _python_solve(system, rl, demand, strategy, tol, max_iter, start_low,
                  relax, trace_path=None):
    payments = np.zeros(system.n + 1) if start_low else rl.total.copy()
    prices = np.zeros(system.m) if start_low else demand.max_price.copy()
    history = []
    trace_rows = []
    status = MAX_ITER
    iterations = max_iter
    res = np.inf
    for it in range(1, max_iter + 1):
        state = ClearingState(payments, prices, np.zeros((system.n, system.m)))
        nxt = clearing_step(state, system, rl, demand, strategy)
        new_p, new_q = nxt.payments, nxt.prices
        if relax is not None:
            new_p = (1.0 - relax) * payments + relax * new_p
            new_q = (1.0 - relax) * prices + relax * new_q
        step = max(np.abs(new_p - payments).max(), np.abs(new_q - prices).max())
        if trace_path is not None:
            trace_rows.append([it, *new_p[1:], *new_q])
        if step <= tol:
            # certify: the step size must stay below tol at the new point too
            check = clearing_step(
                ClearingState(new_p, new_q, np.zeros((system.n, system.m))),
                system, rl, demand, strategy)
            res = max(np.abs(check.payments - new_p).max(),
                      np.abs(check.prices - new_q).max())
            payments, prices = new_p, new_q
            if res <= tol:
                status, iterations = CONVERGED, it
                break
            continue
        cycled = any(max(np.abs(hp - new_p).max(), np.abs(hq - new_q).max()) <= 0.25 * tol
                     for hp, hq in history)
        history.append((new_p.copy(), new_q.copy()))
        if len(history) > _HISTORY:
            history.pop(0)
        payments, prices = new_p, new_q
        if cycled:
            status, iterations = OSCILLATING, it
            break
    if status == MAX_ITER:
        res = residual(ClearingState(payments, prices, np.zeros((system.n, system.m))),
                       system, rl, demand, strategy)
    if trace_path is not None:
        _write_trace(trace_path, trace_rows, system.n, system.m)
    final = ClearingState(payments, prices, np.zeros((system.n, system.m)))
    sales = liquidate(strategy, final, rl, system)
    return ClearingSolution(ClearingState(payments, prices, sales),
                            float(res), iterations, status)


def _write_trace(path, rows, n, m):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter"] + [f"p_{i}" for i in range(1, n + 1)]
                        + [f"q_{k}" for k in range(1, m + 1)])
        for row in rows:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def kernel_eligible(demand: InverseDemand, strategy: LiquidationStrategy) -> bool:
    return strategy.kernel_code() is not None and demand.kernel_spec() is not None


def _kernel_solve(system, rl, demand, strategy, tol, max_iter, start_low, relax):
    code, packed, offsets, units, prices_tab = demand.kernel_spec()
    p_out = np.zeros(system.n + 1)
    q_out = np.zeros(system.m)
    gamma_out = np.zeros((system.n, system.m))
    iterations, status_code, res = _backend.kernels.solve_closed_form(
        np.ascontiguousarray(rl.total),
        np.ascontiguousarray(rl.relative),
        np.ascontiguousarray(system.liquid),
        np.ascontiguousarray(system.illiquid),
        np.ascontiguousarray(system.leverage_cap),
        strategy.kernel_code(), code,
        np.ascontiguousarray(packed), offsets, units, prices_tab,
        np.ascontiguousarray(demand.max_price),
        float(tol), int(max_iter),
        -1.0 if relax is None else float(relax),
        1 if start_low else 0,
        p_out, q_out, gamma_out,
    )
    status = (CONVERGED, MAX_ITER, OSCILLATING)[status_code]
    return ClearingSolution(ClearingState(p_out, q_out, gamma_out),
                            float(res), int(iterations), status)


def solve_picard(system: FinancialSystem, rl: RelativeLiabilities,
                 demand: InverseDemand, strategy: LiquidationStrategy,
                 tol: float | None = None, max_iter: int = 10_000, *,
                 start_low: bool = False, damping: str | float | None = "auto",
                 backend: str = "auto", trace_path=None) -> ClearingSolution:
    """Iterate the clearing map to a fixed point.

    Starts from all obligations honored at top prices (or from the bottom of
    the lattice with ``start_low``, which ascends to the least fixed point
    for nonincreasing rules).  Convergence means the step size dropped below
    ``tol`` and re-applying the map moves the result by at most ``tol``;
    non-convergence is reported through the status, never raised.

    ``damping="auto"`` retries once with relaxation 0.5 when a cycle is
    detected and the rule is one of the continuous non-monotone kinds.
    """
    if tol is None:
        tol = default_tol(system, rl, demand.max_price)
    relax = None
    auto = damping == "auto"
    if isinstance(damping, (int, float)) and not isinstance(damping, bool):
        relax = float(damping)

    use_kernel = (backend == "compiled" or
                  (backend == "auto" and trace_path is None
                   and kernel_eligible(demand, strategy)))
    if backend == "compiled" and not kernel_eligible(demand, strategy):
        raise ValueError("compiled backend cannot run this demand/strategy pair")

    solve = _kernel_solve if use_kernel else _python_solve
    kwargs = {} if use_kernel else {"trace_path": trace_path}
    solution = solve(system, rl, demand, strategy, tol, max_iter, start_low,
                     relax, **kwargs)
    if solution.status == OSCILLATING and auto and not strategy.monotone:
        solution = solve(system, rl, demand, strategy, tol, max_iter, start_low,
                         _DAMPING_RETRY, **kwargs)
    return solution
