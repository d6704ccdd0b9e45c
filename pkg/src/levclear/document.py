"""Self-describing JSON documents for calibrated systems.

A document carries everything needed to re-run or re-derive a scenario:
the system matrices (row-major), the demand/strategy/solver blocks from the
config, the calibration echo (including its seed), and the bank records the
calibration consumed.  Floats serialize via ``repr`` so documents round-trip
bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import demand as demand_mod
from .calibration import BankRecord, CalibrationConfig
from .model import FinancialSystem

FORMAT = "levclear-system"


@dataclass
class SystemDocument:
    system: FinancialSystem
    max_price: np.ndarray
    demand_spec: dict
    strategy_spec: dict
    solver_spec: dict
    counterfactual: dict
    config: Optional[CalibrationConfig] = None
    records: Optional[list[BankRecord]] = None

    def demand(self, system: Optional[FinancialSystem] = None):
        """Bind the demand spec against a system (defaults to the stored one)."""
        return demand_mod.from_spec(self.demand_spec, system or self.system)


DEFAULT_SOLVER = {"mode": "strategy", "tol": None, "max_iter": 10_000}
DEFAULT_COUNTERFACTUAL = {"enabled": False, "beta": 0.0}


def document_from_config(system: FinancialSystem, config_blocks: dict,
                         config: Optional[CalibrationConfig],
                         records: Optional[list[BankRecord]]) -> SystemDocument:
    demand_spec = dict(config_blocks.get("inverse_demand", {"kind": "constant"}))
    demand_spec.setdefault("m", system.m)
    max_price = np.broadcast_to(
        np.asarray(demand_spec.get("max_price", 1.0), dtype=float), (system.m,)).copy()
    return SystemDocument(
        system=system,
        max_price=max_price,
        demand_spec=demand_spec,
        strategy_spec=dict(config_blocks.get("strategy", {"kind": "proportional"})),
        solver_spec={**DEFAULT_SOLVER, **config_blocks.get("solver", {})},
        counterfactual={**DEFAULT_COUNTERFACTUAL, **config_blocks.get("counterfactual", {})},
        config=config,
        records=records,
    )


def save_system(doc: SystemDocument, path) -> None:
    payload = {
        "format": FORMAT,
        "version": 1,
        "n": doc.system.n,
        "m": doc.system.m,
        "liabilities": doc.system.liabilities.tolist(),
        "liquid": doc.system.liquid.tolist(),
        "illiquid": doc.system.illiquid.tolist(),
        "leverage_cap": doc.system.leverage_cap.tolist(),
        "max_price": doc.max_price.tolist(),
        "demand": doc.demand_spec,
        "strategy": doc.strategy_spec,
        "solver": doc.solver_spec,
        "counterfactual": doc.counterfactual,
        "config": dataclasses.asdict(doc.config) if doc.config else None,
        "records": [dataclasses.asdict(r) for r in doc.records] if doc.records else None,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_system(path) -> SystemDocument:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} document")
    system = FinancialSystem(
        liabilities=np.asarray(payload["liabilities"], dtype=float),
        liquid=np.asarray(payload["liquid"], dtype=float),
        illiquid=np.asarray(payload["illiquid"], dtype=float),
        leverage_cap=np.asarray(payload["leverage_cap"], dtype=float),
    )
    config = None
    if payload.get("config"):
        raw = dict(payload["config"])
        if isinstance(raw.get("leverage_cap"), list):
            raw["leverage_cap"] = tuple(raw["leverage_cap"])
        config = CalibrationConfig(**raw)
    records = None
    if payload.get("records"):
        records = [BankRecord(**r) for r in payload["records"]]
    return SystemDocument(
        system=system,
        max_price=np.asarray(payload["max_price"], dtype=float),
        demand_spec=payload["demand"],
        strategy_spec=payload["strategy"],
        solver_spec={**DEFAULT_SOLVER, **payload.get("solver", {})},
        counterfactual={**DEFAULT_COUNTERFACTUAL, **payload.get("counterfactual", {})},
        config=config,
        records=records,
    )
