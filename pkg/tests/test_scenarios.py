import csv

import numpy as np
import pytest

import levclear
from levclear.calibration import CalibrationConfig, read_bank_records
from levclear.clearing import CONVERGED, solve_picard
from levclear.document import DEFAULT_COUNTERFACTUAL, DEFAULT_SOLVER, SystemDocument
from levclear.model import FinancialSystem, derive_relative_liabilities
from levclear.scenarios import (
    MISSING,
    ScenarioResult,
    SweepRow,
    _interpolate,
    exhaustive_leverage_threshold,
    leverage_evaluator,
    leverage_scan,
    min_safe_leverage,
    risk_metrics,
    sweep,
    sweep_rows_to_csv,
)
from levclear.strategies import LiquidationStrategy


def make_doc(alpha=0.0, m=1, seed=7, leverage_cap=15.0, year=2007,
             counterfactual=None, mode="strategy", strategy=None):
    records = read_bank_records(levclear.sample_banks_path(), year=year)
    config = CalibrationConfig(connection_prob=0.25, max_interbank_fraction=0.1,
                               alpha=alpha, sigma=0.0, m=m, seed=seed,
                               leverage_cap=leverage_cap, year=year)
    system = levclear.build_system(records, config, 1.0)
    return SystemDocument(
        system=system,
        max_price=np.ones(m),
        demand_spec={"kind": "piecewise_linear_sqrt", "max_price": 1.0,
                     "slope": 2.0 / 3.0e8, "knot": 5.0e7, "m": m},
        strategy_spec=strategy or {"kind": "single_asset" if m == 1 else "proportional"},
        solver_spec={**DEFAULT_SOLVER, "mode": mode},
        counterfactual={**DEFAULT_COUNTERFACTUAL, **(counterfactual or {})},
        config=config,
        records=records,
    )


class TestRiskMetrics:
    def test_full_payment_is_safe(self, t1):
        system, rl, market = t1
        rich = FinancialSystem(system.liabilities, [20.0, 20.0],
                               system.illiquid, system.leverage_cap)
        rl2 = derive_relative_liabilities(rich)
        sol = solve_picard(rich, rl2, market, LiquidationStrategy("single_asset"))
        metrics = risk_metrics(sol, rich, rl2)
        assert metrics.frac_defaulting == 0.0
        assert metrics.frac_leverage_violating == 0.0
        assert metrics.outside_payment_fraction == 1.0

    def test_total_collapse(self):
        liab = np.zeros((3, 3))
        liab[1, 0] = 5.0
        liab[2, 0] = 5.0
        broke = FinancialSystem(liab, [0.0, 0.0], [[0.0], [0.0]], [0.0, 0.0])
        rl = derive_relative_liabilities(broke)
        market = levclear.demand.constant(1.0)
        sol = solve_picard(broke, rl, market, LiquidationStrategy("single_asset"))
        metrics = risk_metrics(sol, broke, rl)
        assert metrics.frac_defaulting == 1.0
        assert metrics.frac_leverage_violating == 1.0
        assert metrics.outside_payment_fraction == 0.0

    def test_t1_greatest_point_classification(self, t1):
        system, rl, market = t1
        sol = solve_picard(system, rl, market, LiquidationStrategy("single_asset"))
        metrics = risk_metrics(sol, system, rl)
        # firm 1 pays 5.875 < 10, firm 2 pays in full
        assert metrics.frac_defaulting == 0.5
        assert metrics.frac_leverage_violating == 0.5
        expected_outside = (0.5 * 5.875 + 1.0 * 8.0) / (0.5 * 10.0 + 1.0 * 8.0)
        assert metrics.outside_payment_fraction == pytest.approx(expected_outside)

    def test_no_outside_obligations_reports_one(self):
        liab = np.zeros((3, 3))
        liab[1, 2] = 4.0
        system = FinancialSystem(liab, [5.0, 0.0], [[1.0], [1.0]], [0.0, 0.0])
        rl = derive_relative_liabilities(system)
        market = levclear.demand.constant(1.0)
        sol = solve_picard(system, rl, market, LiquidationStrategy("single_asset"))
        assert risk_metrics(sol, system, rl).outside_payment_fraction == 1.0


class TestLeverageScan:
    def test_backends_agree(self):
        doc = make_doc()
        rl = derive_relative_liabilities(doc.system)
        grid = np.linspace(0.0, 30.0, 41)
        strategy = LiquidationStrategy("single_asset")
        fast = leverage_scan(doc.system, rl, doc.demand(), strategy, grid)
        slow = leverage_scan(doc.system, rl, doc.demand(), strategy, grid,
                             backend="python")
        for a, b in zip(fast, slow):
            assert a.status == b.status == CONVERGED
            assert a.frac_defaulting == b.frac_defaulting
            assert abs(a.outside_payment_fraction - b.outside_payment_fraction) < 1e-12


class TestMinSafeLeverage:
    def test_solvent_all_cash_system_returns_lower_bound(self):
        doc = make_doc(alpha=1.0)
        search = min_safe_leverage(leverage_evaluator(doc), lo=0.0, hi=50.0,
                                   step=0.5)
        assert search.threshold == 0.0

    def test_t1_bisect_matches_exhaustive_grid(self, t1):
        system, rl, market = t1
        strategy = LiquidationStrategy("single_asset")

        def evaluate(lam):
            variant = system.with_leverage_cap(lam)
            sol = solve_picard(variant, rl, market, strategy)
            return risk_metrics(sol, variant, rl)

        step = 0.0025
        search = min_safe_leverage(evaluate, lo=0.0, hi=50.0, step=step)
        grid = step * np.arange(int(round(50.0 / step)) + 1)
        results = leverage_scan(system, rl, market, strategy, grid)
        exhaustive = exhaustive_leverage_threshold(results, grid)
        assert search.threshold == exhaustive

    def test_no_threshold_when_nothing_stabilizes(self):
        liab = np.zeros((2, 2))
        liab[1, 0] = 10.0
        hopeless = FinancialSystem(liab, [0.0], [[1.0]], [0.0])
        rl = derive_relative_liabilities(hopeless)
        market = levclear.demand.constant(0.5)
        strategy = LiquidationStrategy("single_asset")

        def evaluate(lam):
            variant = hopeless.with_leverage_cap(lam)
            sol = solve_picard(variant, rl, market, strategy)
            return risk_metrics(sol, variant, rl)

        search = min_safe_leverage(evaluate, lo=0.0, hi=10.0, step=0.5)
        assert search.threshold is None


class TestSweep:
    def test_alpha_monotone_outside_fraction(self):
        doc = make_doc(leverage_cap=3.0)
        table = sweep(doc, "alpha", [0.0, 0.5, 1.0], reps=1, seed=5)
        outs = [r.result.outside_payment_fraction for r in table.rows]
        assert outs[0] <= outs[1] <= outs[2]
        assert outs[2] == 1.0

    def test_repeat_runs_identical(self):
        doc = make_doc()
        a = sweep(doc, "leverage", np.linspace(0, 20, 9), reps=2, seed=3)
        b = sweep(doc, "leverage", np.linspace(0, 20, 9), reps=2, seed=3)
        for ra, rb in zip(a.rows, b.rows):
            assert (ra.param, ra.rep) == (rb.param, rb.rep)
            assert ra.result == rb.result

    def test_beta_endpoints_in_counterfactual(self):
        doc = make_doc(alpha=0.2, leverage_cap=10.0,
                       counterfactual={"enabled": True, "beta": 0.1})
        table = sweep(doc, "beta", [0.0, 1.0], reps=1, seed=0)
        first, last = table.rows[0].result, table.rows[-1].result
        assert first.outside_payment_fraction == 1.0
        assert first.frac_defaulting == 0.0
        # total collapse up to fixed-point tolerance on the payment crumbs
        assert last.outside_payment_fraction <= 1e-9
        assert last.frac_defaulting == 1.0

    def test_sigma_sweep_replication_bands(self):
        doc = make_doc(alpha=0.2, m=4, leverage_cap=8.0,
                       strategy={"kind": "proportional"})
        table = sweep(doc, "sigma", [0.0, 1.0], reps=8, seed=11)
        assert len(table.rows) == 16
        aggregates = {agg.param: agg for agg in table.aggregates}
        assert aggregates[0.0].count == 8
        for agg in table.aggregates:
            for lo, hi in zip(agg.q05, agg.q95):
                assert lo <= hi + 1e-12

    def test_rebuild_params_need_records(self, t1):
        system, rl, market = t1
        doc = SystemDocument(system=system, max_price=np.ones(1),
                             demand_spec={"kind": "constant", "m": 1},
                             strategy_spec={"kind": "single_asset"},
                             solver_spec=dict(DEFAULT_SOLVER),
                             counterfactual=dict(DEFAULT_COUNTERFACTUAL))
        with pytest.raises(ValueError, match="needs the calibration config"):
            sweep(doc, "alpha", [0.0, 1.0])

    def test_unknown_param_rejected(self):
        doc = make_doc()
        with pytest.raises(ValueError, match="unknown sweep parameter"):
            sweep(doc, "gamma", [0.0])


class TestInterpolation:
    def row(self, param, status=CONVERGED, value=0.5):
        return SweepRow(param, 0, ScenarioResult(value, value, value, status))

    def test_midpoint_blend(self):
        rows = [self.row(0.0, value=0.0),
                self.row(0.5, status="max_iter", value=99.0),
                self.row(1.0, value=1.0)]
        _interpolate(rows)
        middle = rows[1].result
        assert middle.interpolated
        assert middle.status == "max_iter"
        assert middle.frac_defaulting == pytest.approx(0.5)

    def test_unequal_spacing_uses_parameter_distance(self):
        rows = [self.row(0.0, value=0.0),
                self.row(0.25, status="oscillating", value=99.0),
                self.row(1.0, value=1.0)]
        _interpolate(rows)
        assert rows[1].result.frac_defaulting == pytest.approx(0.25)

    def test_edge_points_become_missing(self):
        rows = [self.row(0.0, status="max_iter", value=99.0),
                self.row(1.0, value=1.0)]
        _interpolate(rows)
        assert rows[0].result.status == MISSING
        assert not rows[0].result.interpolated
        assert np.isnan(rows[0].result.frac_defaulting)

    def test_interpolation_is_per_replication(self):
        rows = [SweepRow(0.0, 0, ScenarioResult(0.0, 0.0, 0.0, CONVERGED)),
                SweepRow(1.0, 0, ScenarioResult(1.0, 1.0, 1.0, CONVERGED)),
                SweepRow(0.5, 1, ScenarioResult(9.0, 9.0, 9.0, "max_iter"))]
        _interpolate(rows)
        assert rows[2].result.status == MISSING


class TestCsvWriters:
    def test_pinned_header_and_flags(self, tmp_path):
        doc = make_doc()
        table = sweep(doc, "leverage", [0.0, 10.0], reps=1, seed=1)
        path = tmp_path / "rows.csv"
        sweep_rows_to_csv(table, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["param", "rep", "frac_default", "frac_violate",
                           "outside_frac", "status", "interpolated"]
        assert rows[1][0] == "0.0"
        assert rows[1][6] == "false"
