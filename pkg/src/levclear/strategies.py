"""Closed-form liquidation rules: how much of each asset a firm sells.

Each rule maps a candidate state (payments, prices) to the matrix of desired
unit sales.  Only ``holdings ∧ sales`` ever trades, so rules are free to
return more units than a firm owns to signal "sell everything".

The two exact rules (single asset, proportional) are continuous and
nonincreasing.  The price-ranked rules sell dearest-first or cheapest-first
and are only available in their smoothed form here: the smoothing weight
``exp(-gap/epsilon)`` blends assets whose prices are within ~epsilon of each
other, which restores continuity; as epsilon shrinks the output approaches
the greedy behavior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import (
    ClearingState,
    FinancialSystem,
    RelativeLiabilities,
    incoming_payments,
    liquidation_requirements,
    portfolio_values,
)

SINGLE_ASSET = "single_asset"
PROPORTIONAL = "proportional"
BEST_FIRST = "best_first"
WORST_FIRST = "worst_first"
EQUILIBRIUM = "equilibrium"

_EPS_KINDS = (BEST_FIRST, WORST_FIRST)


def _default_smoothing(gap, epsilon):
    return np.exp(-gap / epsilon)


@dataclass(frozen=True)
class LiquidationStrategy:
    """Tagged choice of liquidation rule plus its smoothing parameters."""

    kind: str
    epsilon: Optional[float] = None
    alt_residual_bound: bool = False
    smoothing: Callable = _default_smoothing

    def __post_init__(self):
        if self.kind not in (SINGLE_ASSET, PROPORTIONAL, BEST_FIRST, WORST_FIRST):
            raise ValueError(f"unknown strategy kind: {self.kind!r}")
        if self.kind in _EPS_KINDS:
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError(f"{self.kind} needs epsilon > 0")

    @property
    def monotone(self) -> bool:
        """Whether the rule is componentwise nonincreasing in (payments, prices)."""
        return self.kind in (SINGLE_ASSET, PROPORTIONAL)

    def kernel_code(self) -> Optional[int]:
        return {SINGLE_ASSET: 0, PROPORTIONAL: 1}.get(self.kind)


def from_spec(spec) -> LiquidationStrategy:
    """Parse a strategy config block or a CLI token like ``best_first:0.01``."""
    if isinstance(spec, str):
        kind, _, eps = spec.partition(":")
        return LiquidationStrategy(kind, float(eps) if eps else None)
    return LiquidationStrategy(
        spec["kind"],
        spec.get("epsilon"),
        bool(spec.get("alt_residual_bound", False)),
    )


def liquidate(strategy: LiquidationStrategy, state: ClearingState,
              rl: RelativeLiabilities, system: FinancialSystem) -> np.ndarray:
    """Dispatch to the rule named by the strategy."""
    if strategy.kind == SINGLE_ASSET:
        return liquidate_single_asset(state, rl, system)
    if strategy.kind == PROPORTIONAL:
        return liquidate_proportional(state, rl, system)
    if strategy.kind == BEST_FIRST:
        return liquidate_best_first(state, rl, system, strategy.epsilon,
                                    strategy.alt_residual_bound, strategy.smoothing)
    return liquidate_worst_first(state, rl, system, strategy.epsilon,
                                 strategy.alt_residual_bound, strategy.smoothing)


def liquidate_single_asset(state, rl, system) -> np.ndarray:
    """m = 1: sell exactly the required proceeds divided by the price.

    At price zero nothing can raise cash, so a firm with an open requirement
    dumps its whole holding (for zero proceeds) and one without sells nothing.
    """
    if system.m != 1:
        raise ValueError("single_asset strategy requires exactly one illiquid asset")
    required = liquidation_requirements(state.payments, state.prices, rl, system)
    price = float(state.prices[0])
    if price > 0:
        return (required / price)[:, None]
    return np.where(required > 0, system.illiquid[:, 0], 0.0)[:, None]


def liquidate_proportional(state, rl, system) -> np.ndarray:
    """Sell every asset in proportion to the holding, scaled to the requirement.

    A firm whose book is worthless at the current prices but still owes
    proceeds liquidates everything.
    """
    required = liquidation_requirements(state.payments, state.prices, rl, system)
    value = portfolio_values(state.prices, system)
    sales = np.zeros_like(system.illiquid)
    ok = value > 0
    sales[ok] = system.illiquid[ok] * (required[ok] / value[ok])[:, None]
    broke = (~ok) & (required > 0)
    sales[broke] = system.illiquid[broke]
    return sales


def _rank_by_price(prices) -> np.ndarray:
    """Asset indices from dearest to cheapest; ties keep ascending index order."""
    return np.lexsort((np.arange(prices.shape[0]), -prices))


def _requirement_parts(state, rl, system):
    """(cash shortfall)+ and the leverage headroom term, per firm."""
    inc = incoming_payments(state.payments, rl)
    obligations = rl.total[1:]
    shortfall = np.maximum(obligations - (system.liquid + inc), 0.0)
    assets = system.liquid + portfolio_values(state.prices, system) + inc
    headroom = system.leverage_cap * np.maximum(assets - obligations, 0.0)
    return shortfall, headroom


def _block_weights(qr, h, worst: bool) -> np.ndarray:
    """weight[r, c]: how strongly ranked block r claims ranked asset c.

    The bracket term discounts assets already spoken for by earlier blocks;
    it is the printed sum-of-products form, which telescopes to a plain
    product over earlier gaps.
    """
    m = qr.shape[0]
    weight = np.zeros((m, m))
    for r in range(m):
        for c in range(m):
            if worst:
                lead = h(qr[c] - qr[r])
                spoken = 0.0
                for a in range(r + 1, m):
                    prod = 1.0
                    for b in range(a + 1, m):
                        prod *= 1.0 - h(qr[c] - qr[b])
                    spoken += h(qr[c] - qr[a]) * prod
            else:
                lead = h(qr[r] - qr[c])
                spoken = 0.0
                for a in range(r):
                    prod = 1.0
                    for b in range(a):
                        prod *= 1.0 - h(qr[b] - qr[c])
                    spoken += h(qr[a] - qr[c]) * prod
            weight[r, c] = lead * (1.0 - spoken)
    return weight


def _smoothed_ranked(state, rl, system, epsilon, alt_bound, smoothing, worst: bool):
    """Shared engine for the two price-ranked smoothed rules.

    Work happens in ranked coordinates (dearest first).  Each ranked block
    spends the open requirement on a weighted proportional sale over the
    assets it may touch; blocks run dearest-first (cheapest-first when
    ``worst``) and the open requirement shrinks by each block's weighted
    capacity.  Zero-capacity blocks contribute nothing.  ``alt_bound``
    switches the recursion to deduct the next block's capacity instead of
    the current one (the alternative reading of the residual bound).
    """
    m = system.m
    order = _rank_by_price(state.prices)
    qr = state.prices[order]
    sr = system.illiquid[:, order]
    # every gap the recursion actually uses is >= 0; the clamp only sanitizes
    # the unused triangle of the weight matrix
    h = lambda gap: smoothing(max(gap, 0.0), epsilon)
    weight = _block_weights(qr, h, worst)
    shortfall, headroom = _requirement_parts(state, rl, system)

    sales_ranked = np.zeros_like(sr)
    for i in range(system.n):
        value = sr[i] * qr
        if worst:
            caps = np.array([float(weight[r, : r + 1] @ value[: r + 1]) for r in range(m)])
        else:
            caps = np.array([float(weight[r, r:] @ value[r:]) for r in range(m)])
        open_req = np.empty(m)
        g = shortfall[i] - headroom[i]
        if worst:
            for r in range(m - 1, -1, -1):
                open_req[r] = g
                if alt_bound:
                    spend = float(weight[r, :r] @ value[:r]) if r > 0 else 0.0
                else:
                    spend = caps[r]
                g = g - min(max(g, 0.0), spend)
        else:
            for r in range(m):
                open_req[r] = g
                if alt_bound:
                    spend = float(weight[r, r + 1:] @ value[r + 1:]) if r + 1 < m else 0.0
                else:
                    spend = caps[r]
                g = g - min(max(g, 0.0), spend)
        for c in range(m):
            blocks = range(c, m) if worst else range(c + 1)
            total = 0.0
            for r in blocks:
                if caps[r] > 0 and open_req[r] > 0:
                    total += weight[r, c] * sr[i, c] / caps[r] * open_req[r]
            sales_ranked[i, c] = total

    sales = np.zeros_like(sales_ranked)
    sales[:, order] = sales_ranked
    return sales


def liquidate_best_first(state, rl, system, epsilon, alt_residual_bound=False,
                         smoothing=_default_smoothing) -> np.ndarray:
    """Smoothed dearest-asset-first liquidation."""
    return _smoothed_ranked(state, rl, system, epsilon, alt_residual_bound,
                            smoothing, worst=False)


def liquidate_worst_first(state, rl, system, epsilon, alt_residual_bound=False,
                          smoothing=_default_smoothing) -> np.ndarray:
    """Smoothed cheapest-asset-first liquidation."""
    return _smoothed_ranked(state, rl, system, epsilon, alt_residual_bound,
                            smoothing, worst=True)


def verify_minimal_liquidation(liquidations, state, rl, system, tol) -> np.ndarray:
    """Per-firm check that realized proceeds hit the required amount exactly.

    Proceeds of the capped sale must equal the smaller of the requirement and
    the whole book's value, within ``tol`` currency units.
    """
    return minimal_liquidation_gaps(liquidations, state, rl, system) <= tol


def minimal_liquidation_gaps(liquidations, state, rl, system) -> np.ndarray:
    """|realized proceeds - required proceeds| per firm, in currency."""
    required = liquidation_requirements(state.payments, state.prices, rl, system)
    sold = np.minimum(system.illiquid, np.atleast_2d(liquidations))
    proceeds = sold @ state.prices
    target = np.minimum(portfolio_values(state.prices, system), required)
    return np.abs(proceeds - target)
