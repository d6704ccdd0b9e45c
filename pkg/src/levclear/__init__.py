"""Fire-sale contagion in interbank networks under leverage requirements.

Clearing payments and asset prices arise as fixed points of a map that pays
each firm the lesser of its obligations and its marked-to-market assets and
reprices illiquid assets through an inverse demand curve at the aggregate
units liquidated.  Firms sell because breaching their leverage cap forces
them to; how they spread the sale across assets is either a closed-form rule
or the Nash equilibrium of a valuation game.
"""

from ._backend import COMPILED
from .calibration import (
    BankRecord,
    CalibrationConfig,
    apply_leverage_counterfactual,
    apply_shock,
    build_system,
    calibrate_liabilities,
    read_bank_records,
    sample_adjacency,
    sample_portfolio,
)
from .clearing import ClearingSolution, clearing_step, residual, solve_picard
from .demand import InverseDemand, validate
from .document import SystemDocument, load_system, save_system
from .equilibrium import (
    EquilibriumSolution,
    best_response,
    psi_step,
    solve_equilibrium,
)
from .model import (
    ClearingState,
    FinancialSystem,
    RelativeLiabilities,
    cash_payment,
    derive_relative_liabilities,
    leverage_ratio,
    liquidation_requirement,
    wealth,
)
from .scenarios import (
    ScenarioResult,
    leverage_scan,
    min_safe_leverage,
    risk_metrics,
    sweep,
)
from .strategies import (
    LiquidationStrategy,
    liquidate,
    liquidate_best_first,
    liquidate_proportional,
    liquidate_single_asset,
    liquidate_worst_first,
    verify_minimal_liquidation,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]


def sample_banks_path():
    """Path to the bundled ten-bank balance-sheet sample (2007-2011)."""
    from importlib.resources import files

    return files("levclear.data").joinpath("sample_banks.csv")
