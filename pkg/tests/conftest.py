import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from levclear import demand as demand_mod
from levclear.model import ClearingState, FinancialSystem, derive_relative_liabilities


def make_random_system(rng, n_lo=2, n_hi=10, m_lo=1, m_hi=3, solvent=False,
                       connection=0.5):
    """A small random network with outside obligations on every firm."""
    n = int(rng.integers(n_lo, n_hi + 1))
    m = int(rng.integers(m_lo, m_hi + 1))
    liab = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        liab[i, 0] = rng.uniform(1.0, 8.0)
        for j in range(1, n + 1):
            if i != j and rng.random() < connection:
                liab[i, j] = rng.uniform(0.0, 4.0)
    liquid = rng.uniform(0.0, 3.0, n)
    illiquid = rng.uniform(0.5, 5.0, (n, m))
    cap = rng.uniform(0.0, 3.0, n)
    if solvent:
        # enough cash that nobody is short even at zero prices, with equity
        # thick enough that a huge cap erases any requirement
        totals = liab.sum(axis=1)[1:]
        liquid = totals + rng.uniform(1.0, 5.0, n)
    return FinancialSystem(liab, liquid, illiquid, cap)


def linear_market(system, rng=None, depth=None):
    """Clipped-linear demand whose price stays positive at total supply."""
    supply = system.total_supply
    if depth is None:
        factor = 1.5 if rng is None else float(rng.uniform(1.3, 3.0))
        depth = factor * np.maximum(supply, 1e-6) + 1.0
    return demand_mod.piecewise_linear_sqrt(max_price=1.0, slope=1.0 / depth,
                                            knot=np.inf, m=system.m)


@pytest.fixture
def t1():
    """Two firms, one asset: the worked reference instance.

    Firm 1 owes 5 to firm 2 and 5 outside; firm 2 owes 8 outside.  Greatest
    fixed point (5.875, 8, 0.8125), least (4, 8, 0.5), both derived by hand
    from the regime case analysis.
    """
    liab = np.zeros((3, 3))
    liab[1, 2] = 5.0
    liab[1, 0] = 5.0
    liab[2, 0] = 8.0
    system = FinancialSystem(liab, [1.0, 1.0], [[6.0], [10.0]], [2.0, 2.0])
    rl = derive_relative_liabilities(system)
    market = demand_mod.piecewise_linear_sqrt(max_price=1.0, slope=1.0 / 32.0,
                                              knot=np.inf)
    return system, rl, market


@pytest.fixture
def state_of():
    def build(system, payments, prices, liquidations=None):
        if liquidations is None:
            liquidations = np.zeros((system.n, system.m))
        return ClearingState(np.asarray(payments, dtype=float),
                             np.asarray(prices, dtype=float), liquidations)
    return build
