"""Balance-sheet model of an interbank network with one outside node.

The network has ``n`` inside firms plus a sink node (index 0) standing for
the economy outside the system.  Node 0 owes nothing and never defaults;
firms may owe it.  All per-firm operations take indices ``1..n``; index 0 is
reserved for the outside node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype, order="C", copy=True)
    out.setflags(write=False)
    return out


def comparison_tol(scale: float) -> float:
    """Default absolute tolerance for currency comparisons at a given scale."""
    return 1e-9 * (1.0 + scale)


@dataclass(frozen=True)
class FinancialSystem:
    """Static balance-sheet data: who owes what, and what everyone holds.

    liabilities
        (n+1) x (n+1) nonnegative matrix; row i holds the nominal
        obligations of node i, column j the claims on node j.  Row 0 is all
        zeros (the outside node owes nothing) and the diagonal is zero.
    liquid
        length-n cash endowments of the firms.
    illiquid
        n x m holdings of the illiquid assets, in physical units.
    leverage_cap
        length-n maximum admissible leverage ratio per firm.
    """

    liabilities: np.ndarray
    liquid: np.ndarray
    illiquid: np.ndarray
    leverage_cap: np.ndarray

    def __post_init__(self):
        liab = _frozen(self.liabilities)
        liquid = _frozen(self.liquid)
        illiquid = _frozen(np.atleast_2d(self.illiquid))
        cap = _frozen(self.leverage_cap)
        object.__setattr__(self, "liabilities", liab)
        object.__setattr__(self, "liquid", liquid)
        object.__setattr__(self, "illiquid", illiquid)
        object.__setattr__(self, "leverage_cap", cap)

        if liab.ndim != 2 or liab.shape[0] != liab.shape[1]:
            raise ValueError("liabilities must be a square matrix")
        n = liab.shape[0] - 1
        if n < 1:
            raise ValueError("need at least one inside firm")
        if liquid.shape != (n,):
            raise ValueError(f"liquid must have length {n}")
        if illiquid.shape[0] != n:
            raise ValueError(f"illiquid must have {n} rows")
        if cap.shape != (n,):
            raise ValueError(f"leverage_cap must have length {n}")
        for name, arr in (("liabilities", liab), ("liquid", liquid),
                          ("illiquid", illiquid), ("leverage_cap", cap)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
        if np.any(np.diag(liab) != 0):
            raise ValueError("no node may owe itself")
        if np.any(liab[0] != 0):
            raise ValueError("the outside node (row 0) must owe nothing")

    @property
    def n(self) -> int:
        return self.liabilities.shape[0] - 1

    @property
    def m(self) -> int:
        return self.illiquid.shape[1]

    @property
    def total_supply(self) -> np.ndarray:
        """Column sums of the illiquid holdings (units available per asset)."""
        return self.illiquid.sum(axis=0)

    def comparison_tol(self) -> float:
        return comparison_tol(float(self.liabilities.sum(axis=1).max()))

    def with_leverage_cap(self, cap) -> "FinancialSystem":
        cap = np.broadcast_to(np.asarray(cap, dtype=float), (self.n,))
        return FinancialSystem(self.liabilities, self.liquid, self.illiquid, cap)

    def without_leverage(self) -> "FinancialSystem":
        """Pure fire-sale configuration: identical engine with all caps at zero."""
        return self.with_leverage_cap(0.0)


@dataclass(frozen=True)
class RelativeLiabilities:
    """Total obligations per node and the row-stochastic pro-rata share matrix."""

    total: np.ndarray
    relative: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "total", _frozen(self.total))
        object.__setattr__(self, "relative", _frozen(self.relative))
        rows = self.relative.sum(axis=1)
        if not np.allclose(rows, 1.0, rtol=0, atol=1e-12):
            raise ValueError("relative liabilities rows must sum to one")


def derive_relative_liabilities(system: FinancialSystem) -> RelativeLiabilities:
    """Totals and pro-rata shares; rows with zero obligations get a uniform row.

    The uniform fallback spreads over all n+1 nodes.  Such a row belongs to a
    node that never pays anything (its total is zero), so the fallback value
    never reaches a payment flow.
    """
    liab = system.liabilities
    total = liab.sum(axis=1)
    k = liab.shape[0]
    relative = np.full_like(liab, 1.0 / k)
    pos = total > 0
    relative[pos] = liab[pos] / total[pos, None]
    return RelativeLiabilities(total=total, relative=relative)


@dataclass(frozen=True)
class ClearingState:
    """A candidate clearing point: payments, asset prices, liquidation matrix."""

    payments: np.ndarray      # (n+1,), entry 0 is the outside node (always 0)
    prices: np.ndarray        # (m,)
    liquidations: np.ndarray  # (n, m), desired units to sell (uncapped)

    def __post_init__(self):
        object.__setattr__(self, "payments", _frozen(self.payments))
        object.__setattr__(self, "prices", _frozen(self.prices))
        object.__setattr__(self, "liquidations", _frozen(np.atleast_2d(self.liquidations)))
        if np.any(self.payments < 0) or np.any(self.prices < 0) or np.any(self.liquidations < 0):
            raise ValueError("payments, prices and liquidations must be nonnegative")

    @classmethod
    def start(cls, system: FinancialSystem, rl: RelativeLiabilities, max_price) -> "ClearingState":
        """The all-obligations-honored point (p-bar, q-bar, no liquidations)."""
        return cls(rl.total.copy(), np.asarray(max_price, dtype=float),
                   np.zeros((system.n, system.m)))

    def sold(self, system: FinancialSystem) -> np.ndarray:
        """Units actually sold per firm and asset (capped by holdings)."""
        return np.minimum(system.illiquid, self.liquidations)


# -- vectorized balance-sheet arithmetic (firms 1..n mapped to rows 0..n-1) --

def incoming_payments(payments, rl: RelativeLiabilities) -> np.ndarray:
    """Cash received by each firm under pro-rata payments; length n."""
    return payments @ rl.relative[:, 1:]


def portfolio_values(prices, system: FinancialSystem) -> np.ndarray:
    """Mark-to-market value of each firm's illiquid book; length n."""
    return system.illiquid @ np.asarray(prices, dtype=float)


def cash_payments(payments, rl, system) -> np.ndarray:
    """Liquid capital applied to obligations before anything is sold; length n."""
    avail = system.liquid + incoming_payments(payments, rl)
    return np.minimum(rl.total[1:], avail)


def equities(payments, prices, rl, system) -> np.ndarray:
    """Signed post-clearing wealth of each firm; length n."""
    inc = incoming_payments(payments, rl)
    return system.liquid + portfolio_values(prices, system) + inc - payments[1:]


def liquidation_requirements(payments, prices, rl, system) -> np.ndarray:
    """Currency value each firm must raise by selling to meet its leverage cap.

    This is the right-hand side of the minimal-liquidation condition: the
    cash shortfall less whatever headroom the leverage cap grants on positive
    equity valued at full payment, floored at zero.
    """
    inc = incoming_payments(payments, rl)
    obligations = rl.total[1:]
    shortfall = np.maximum(obligations - (system.liquid + inc), 0.0)
    assets = system.liquid + portfolio_values(prices, system) + inc
    headroom = system.leverage_cap * np.maximum(assets - obligations, 0.0)
    return np.maximum(shortfall - headroom, 0.0)


def fire_sale_shortfalls(payments, rl, system) -> np.ndarray:
    """Plain cash shortfall per firm, ignoring leverage headroom entirely."""
    inc = incoming_payments(payments, rl)
    return np.maximum(rl.total[1:] - (system.liquid + inc), 0.0)


# -- per-firm spec operations ------------------------------------------------

def _check_index(i: int, n: int):
    if not 1 <= i <= n:
        raise IndexError(f"firm index must be in 1..{n}, got {i}")


def cash_payment(i: int, state: ClearingState, rl: RelativeLiabilities,
                 system: FinancialSystem) -> float:
    """Cash firm i pays from liquid holdings plus incoming payments."""
    _check_index(i, system.n)
    return float(cash_payments(state.payments, rl, system)[i - 1])


def wealth(i: int, state: ClearingState, rl: RelativeLiabilities,
           system: FinancialSystem) -> float:
    """Signed wealth of firm i at the candidate state (may be negative)."""
    _check_index(i, system.n)
    return float(equities(state.payments, state.prices, rl, system)[i - 1])


def leverage_ratio(i: int, state: ClearingState, rl: RelativeLiabilities,
                   system: FinancialSystem, cash_paid: float) -> float | None:
    """Post-liquidation debt over post-clearing equity; None when equity <= 0.

    Sweeps routinely cross insolvent regions, so an undefined ratio is a
    value, not an error.
    """
    _check_index(i, system.n)
    equity = wealth(i, state, rl, system)
    if equity <= 0:
        return None
    proceeds = float(state.liquidations[i - 1] @ state.prices)
    return (rl.total[i] - (cash_paid + proceeds)) / equity


def liquidation_requirement(i: int, state: ClearingState, rl: RelativeLiabilities,
                            system: FinancialSystem) -> float:
    """Currency firm i must raise by liquidating at the candidate state."""
    _check_index(i, system.n)
    return float(liquidation_requirements(state.payments, state.prices, rl, system)[i - 1])
