"""Build financial systems from balance-sheet records.

The pipeline: draw a random directed adjacency, allocate each firm's total
liabilities over its out-edges by linear programming (pushing as little as
possible to the outside node), split each firm's assets into cash and
illiquid holdings, and optionally rescale balance sheets so every firm
starts exactly at its leverage cap before a systematic shock hits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .model import FinancialSystem, RelativeLiabilities, derive_relative_liabilities
from .simplex import SimplexError, solve_lp

CSV_HEADER = ["firm_id", "name", "year", "total_assets", "total_liabilities"]


@dataclass(frozen=True)
class BankRecord:
    firm_id: str
    name: str
    year: int
    total_assets: float
    total_liabilities: float

    def __post_init__(self):
        if self.total_assets < 0 or self.total_liabilities < 0:
            raise ValueError(f"negative balance sheet for {self.firm_id}/{self.year}")


@dataclass(frozen=True)
class CalibrationConfig:
    """Knobs for network construction and portfolio sampling."""

    connection_prob: float = 0.25
    max_interbank_fraction: float = 0.10
    alpha: float = 0.20              # fraction of initial capital held in cash
    sigma: float = 0.0               # dispersion of the illiquid allocation draws
    m: int = 1
    seed: int = 0
    leverage_cap: float | Sequence[float] = 15.0
    year: Optional[int] = None
    counterfactual_asset_mode: str = "proportional"  # or "liquid"

    def __post_init__(self):
        if not 0.0 <= self.connection_prob <= 1.0:
            raise ValueError("connection_prob must lie in [0, 1]")
        if not 0.0 <= self.max_interbank_fraction <= 1.0:
            raise ValueError("max_interbank_fraction must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.m < 1:
            raise ValueError("need at least one illiquid asset")
        if self.counterfactual_asset_mode not in ("proportional", "liquid"):
            raise ValueError("counterfactual_asset_mode must be proportional or liquid")


def read_bank_records(path, year: Optional[int] = None) -> list[BankRecord]:
    """Load the balance-sheet CSV; optionally filter to one year."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_HEADER) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"balance-sheet CSV is missing columns: {sorted(missing)}")
        for row in reader:
            rec = BankRecord(
                firm_id=row["firm_id"].strip(),
                name=row["name"].strip(),
                year=int(row["year"]),
                total_assets=float(row["total_assets"]),
                total_liabilities=float(row["total_liabilities"]),
            )
            if year is None or rec.year == year:
                records.append(rec)
    if not records:
        raise ValueError(f"no bank records found in {path}"
                         + (f" for year {year}" if year is not None else ""))
    return records


def sample_adjacency(n: int, connection_prob: float, seed) -> np.ndarray:
    """Directed firm-to-firm adjacency: each ordered pair drawn independently.

    ``seed`` may be anything ``numpy.random.default_rng`` accepts, including
    an existing generator.  No self-loops; the outside node is always a legal
    destination and is not part of this matrix.
    """
    if not 0.0 <= connection_prob <= 1.0:
        raise ValueError("connection_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    adj = rng.random((n, n)) < connection_prob
    np.fill_diagonal(adj, False)
    return adj


def calibrate_liabilities(records: Sequence[BankRecord], adjacency: np.ndarray,
                          interbank_caps) -> np.ndarray:
    """Allocate liabilities over the network, minimizing flow to the outside.

    Solves: minimize total obligations to node 0, subject to each firm's
    row summing to its recorded total liabilities, incoming interbank claims
    on firm i capped at ``interbank_caps[i]``, and edges restricted to the
    adjacency.  The outside column is always open, so the program is feasible
    by construction.  The returned matrix has rows repaired to sum exactly to
    the recorded totals (residuals are folded into the outside column).
    """
    n = len(records)
    totals = np.array([r.total_liabilities for r in records], dtype=float)
    caps = np.broadcast_to(np.asarray(interbank_caps, dtype=float), (n,))
    adjacency = np.asarray(adjacency, dtype=bool)
    if adjacency.shape != (n, n):
        raise ValueError("adjacency must be n x n")

    # variables: one per admissible (firm, destination) pair; destination 0 first
    var_index = {}
    for i in range(n):
        var_index[(i, -1)] = len(var_index)  # -1 stands for the outside node
        for j in range(n):
            if adjacency[i, j] and i != j:
                var_index[(i, j)] = len(var_index)
    n_vars = len(var_index)
    cost = np.zeros(n_vars)
    a_eq = np.zeros((n, n_vars))
    a_ub = np.zeros((n, n_vars))
    for (i, j), v in var_index.items():
        if j == -1:
            cost[v] = 1.0
        else:
            a_ub[j, v] = 1.0
        a_eq[i, v] = 1.0
    try:
        result = solve_lp(cost, a_eq=a_eq, b_eq=totals, a_ub=a_ub, b_ub=caps)
    except SimplexError as exc:
        raise SimplexError(f"liability allocation failed: {exc}") from exc

    liab = np.zeros((n + 1, n + 1))
    for (i, j), v in var_index.items():
        col = 0 if j == -1 else j + 1
        liab[i + 1, col] = result.x[v]
    # fold numeric residue into the uncapped outside column
    liab[1:, 0] += totals - liab[1:].sum(axis=1)
    liab[1:, 0] = np.maximum(liab[1:, 0], 0.0)
    return liab


def sample_portfolio(capital: float, alpha: float, sigma: float, max_price,
                     m: int, seed) -> tuple[float, np.ndarray]:
    """Split one firm's initial capital into cash and illiquid units.

    Cash takes the ``alpha`` fraction.  The rest spreads over the assets in
    proportion to truncated-normal weights (mean one, spread ``sigma``,
    clipped at zero); a degenerate all-zero draw falls back to equal units.
    The value identity ``cash + max_price . units == capital`` holds by
    construction.
    """
    rng = np.random.default_rng(seed)
    q_max = np.broadcast_to(np.asarray(max_price, dtype=float), (m,))
    cash = alpha * capital
    weights = np.maximum(rng.normal(1.0, sigma, size=m), 0.0) if sigma > 0 \
        else np.ones(m)
    if weights.sum() > 0:
        units = (1.0 - alpha) * capital * weights / (q_max @ weights)
    else:
        units = np.full(m, (1.0 - alpha) * capital / q_max.sum())
    return cash, units


def build_system(records: Sequence[BankRecord], config: CalibrationConfig,
                 max_price) -> FinancialSystem:
    """Assemble a full system from records and a config, reproducibly.

    One seeded stream drives everything, consumed in a fixed order: the
    adjacency first, then one portfolio draw per firm in record order.
    """
    n = len(records)
    rng = np.random.default_rng(config.seed)
    adjacency = sample_adjacency(n, config.connection_prob, rng)
    assets = np.array([r.total_assets for r in records])
    caps = config.max_interbank_fraction * assets
    liabilities = calibrate_liabilities(records, adjacency, caps)
    liquid = np.zeros(n)
    illiquid = np.zeros((n, config.m))
    for i, record in enumerate(records):
        liquid[i], illiquid[i] = sample_portfolio(
            record.total_assets, config.alpha, config.sigma, max_price,
            config.m, rng)
    lev = np.broadcast_to(np.asarray(config.leverage_cap, dtype=float), (n,)).copy()
    return FinancialSystem(liabilities, liquid, illiquid, lev)


@dataclass
class CounterfactualResult:
    """Adjusted system plus the per-firm borrowing/cancelling amounts."""

    system: FinancialSystem
    adjustment: np.ndarray    # w_i, signed
    flagged: np.ndarray       # nonpositive starting equity: firm left untouched
    floored: np.ndarray       # cancellation hit a zero floor and was truncated


def apply_leverage_counterfactual(system: FinancialSystem, rl: RelativeLiabilities,
                                  max_price, leverage_cap,
                                  asset_mode: str = "proportional") -> CounterfactualResult:
    """Rescale balance sheets so each firm starts exactly at its leverage cap.

    Each firm borrows (or cancels) ``w`` against the outside node, growing
    liabilities and assets by the same amount, so that total obligations over
    starting equity -- at full payments and top prices -- equal the cap.  The
    asset side of ``w`` lands proportionally on cash and the illiquid book
    (``asset_mode="liquid"`` puts all of it in cash).  Cancellation never
    drives an obligation or holding negative: the move is truncated and
    flagged instead.  Firms with nonpositive starting equity are skipped and
    flagged.
    """
    q_max = np.broadcast_to(np.asarray(max_price, dtype=float), (system.m,))
    cap = np.broadcast_to(np.asarray(leverage_cap, dtype=float), (system.n,))
    n = system.n
    liab = system.liabilities.copy()
    liquid = system.liquid.copy()
    illiquid = system.illiquid.copy()

    obligations = rl.total[1:]
    incoming = system.liabilities[:, 1:].sum(axis=0)
    book = liquid + illiquid @ q_max
    equity = book + incoming - obligations

    w = np.zeros(n)
    flagged = equity <= 0
    floored = np.zeros(n, dtype=bool)
    for i in range(n):
        if flagged[i]:
            continue
        want = cap[i] * equity[i] - obligations[i]
        if book[i] > 0 and asset_mode == "proportional":
            cash_share = liquid[i] / book[i]
        else:
            cash_share = 1.0
        if want < 0:
            limit = -liab[i + 1, 0]
            if cash_share > 0:
                limit = max(limit, -liquid[i] / cash_share)
            if cash_share < 1.0:
                value = illiquid[i] @ q_max
                limit = max(limit, -value / (1.0 - cash_share))
            if want < limit:
                want = limit
                floored[i] = True
        w[i] = want
        liab[i + 1, 0] += want
        liquid[i] += cash_share * want
        if cash_share < 1.0:
            value = illiquid[i] @ q_max
            if value > 0:
                illiquid[i] *= 1.0 + (1.0 - cash_share) * want / value
    liab[1:, 0] = np.maximum(liab[1:, 0], 0.0)
    liquid = np.maximum(liquid, 0.0)
    illiquid = np.maximum(illiquid, 0.0)
    adjusted = FinancialSystem(liab, liquid, illiquid, cap)
    return CounterfactualResult(adjusted, w, flagged, floored)


def apply_shock(system: FinancialSystem, beta: float) -> FinancialSystem:
    """Scale every firm's holdings down by the systematic shock factor."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("shock size must lie in [0, 1]")
    return replace(system, liquid=(1.0 - beta) * system.liquid,
                   illiquid=(1.0 - beta) * system.illiquid)
