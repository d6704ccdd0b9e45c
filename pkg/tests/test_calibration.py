import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import levclear
from levclear.calibration import (
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
from levclear.model import derive_relative_liabilities
from levclear.simplex import SimplexError, solve_lp
from oracles import enumerate_lp_vertices


def records_of(totals, assets=None):
    assets = assets if assets is not None else [10.0 * t for t in totals]
    return [BankRecord(str(i + 1), f"bank{i + 1}", 2007, a, t)
            for i, (a, t) in enumerate(zip(assets, totals))]


class TestSimplex:
    def test_basic_min(self):
        res = solve_lp(np.array([1.0, 2.0]), a_eq=[[1.0, 1.0]], b_eq=[3.0])
        assert res.objective == 3.0
        assert res.x.tolist() == [3.0, 0.0]

    def test_upper_bounds(self):
        res = solve_lp(np.array([-1.0, -1.0]), a_ub=[[1.0, 0.0], [0.0, 1.0]],
                       b_ub=[2.0, 5.0])
        assert res.objective == -7.0

    def test_infeasible_detected(self):
        with pytest.raises(SimplexError, match="infeasible"):
            solve_lp(np.array([1.0]), a_eq=[[1.0]], b_eq=[2.0],
                     a_ub=[[1.0]], b_ub=[1.0])

    def test_unbounded_detected(self):
        with pytest.raises(SimplexError, match="unbounded"):
            solve_lp(np.array([-1.0]), a_ub=[[-1.0]], b_ub=[0.0])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 5000))
    def test_matches_enumeration_on_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n, rows = 4, 3
        cost = rng.integers(-4, 5, n).astype(float)
        a_ub = rng.integers(0, 4, (rows, n)).astype(float)
        b_ub = rng.integers(1, 9, rows).astype(float)
        a_eq = np.ones((1, n))
        b_eq = np.array([4.0])
        try:
            res = solve_lp(cost, a_eq=a_eq, b_eq=b_eq, a_ub=a_ub, b_ub=b_ub)
        except SimplexError:
            x, val = enumerate_lp_vertices(cost, a_eq, b_eq, a_ub, b_ub)
            assert x is None
            return
        x, val = enumerate_lp_vertices(cost, a_eq, b_eq, a_ub, b_ub)
        assert x is not None
        assert res.objective == pytest.approx(val, abs=1e-9)


class TestAdjacency:
    def test_extreme_probabilities(self):
        empty = sample_adjacency(6, 0.0, 1)
        assert not empty.any()
        full = sample_adjacency(6, 1.0, 1)
        assert full.sum() == 6 * 5
        assert not np.diag(full).any()

    def test_seed_reproducibility(self):
        a = sample_adjacency(20, 0.3, 42)
        b = sample_adjacency(20, 0.3, 42)
        assert np.array_equal(a, b)

    def test_mean_out_degree_matches_binomial(self):
        """Mean out-degree over many seeds sits within 3 SE of 49 * 0.25."""
        n, prob, seeds = 50, 0.25, 1000
        degrees = np.array([sample_adjacency(n, prob, s).sum(axis=1).mean()
                            for s in range(seeds)])
        expect = (n - 1) * prob
        se = np.sqrt((n - 1) * prob * (1 - prob) / (seeds * n))
        assert abs(degrees.mean() - expect) <= 3 * se


class TestCalibrateLiabilities:
    def test_zero_caps_push_everything_outside(self):
        records = records_of([10.0, 8.0, 6.0])
        adjacency = ~np.eye(3, dtype=bool)
        liab = calibrate_liabilities(records, adjacency, np.zeros(3))
        assert liab[1:, 0].tolist() == [10.0, 8.0, 6.0]
        assert liab[1:, 1:].sum() == 0.0

    def test_single_firm_everything_outside(self):
        records = records_of([10.0])
        liab = calibrate_liabilities(records, np.zeros((1, 1), dtype=bool),
                                     np.array([100.0]))
        assert liab[1, 0] == 10.0

    def test_three_node_instance_matches_enumeration_exactly(self):
        records = records_of([10.0, 8.0, 6.0])
        adjacency = ~np.eye(3, dtype=bool)
        caps = np.array([4.0, 4.0, 4.0])
        liab = calibrate_liabilities(records, adjacency, caps)
        # rebuild the same program and enumerate its vertices
        var_index = {}
        for i in range(3):
            var_index[(i, -1)] = len(var_index)
            for j in range(3):
                if i != j:
                    var_index[(i, j)] = len(var_index)
        cost = np.zeros(len(var_index))
        a_eq = np.zeros((3, len(var_index)))
        a_ub = np.zeros((3, len(var_index)))
        for (i, j), v in var_index.items():
            a_eq[i, v] = 1.0
            if j == -1:
                cost[v] = 1.0
            else:
                a_ub[j, v] = 1.0
        _, oracle_value = enumerate_lp_vertices(
            cost, a_eq, [10.0, 8.0, 6.0], a_ub, caps)
        assert liab[1:, 0].sum() == oracle_value

    def test_constraints_hold_on_random_networks(self):
        rng = np.random.default_rng(9)
        totals = rng.uniform(5.0, 50.0, 12)
        records = records_of(totals.tolist())
        adjacency = sample_adjacency(12, 0.4, 3)
        caps = rng.uniform(1.0, 10.0, 12)
        liab = calibrate_liabilities(records, adjacency, caps)
        assert np.all(liab >= 0)
        np.testing.assert_allclose(liab[1:].sum(axis=1), totals, rtol=0,
                                   atol=1e-9)
        assert np.all(liab[1:, 1:].sum(axis=0) <= caps + 1e-9)
        blocked = ~adjacency
        np.fill_diagonal(blocked, True)
        assert np.all(liab[1:, 1:][blocked] == 0.0)


class TestSamplePortfolio:
    def test_zero_spread_splits_equally(self):
        cash, units = sample_portfolio(100.0, 0.25, 0.0, np.ones(4), 4, 0)
        assert cash == 25.0
        assert np.allclose(units, 75.0 / 4)

    def test_all_cash(self):
        cash, units = sample_portfolio(100.0, 1.0, 0.7, np.ones(3), 3, 0)
        assert cash == 100.0
        assert np.all(units == 0.0)

    def test_conservation_identity(self):
        rng = np.random.default_rng(0)
        q_max = np.array([1.0, 2.0, 0.5])
        for draw in range(200):
            capital = float(rng.uniform(1.0, 1e9))
            alpha = float(rng.uniform(0.0, 1.0))
            sigma = float(rng.uniform(0.0, 3.0))
            cash, units = sample_portfolio(capital, alpha, sigma, q_max, 3, draw)
            assert abs(cash + q_max @ units - capital) <= 1e-9 * (1.0 + capital)


class TestBuildSystem:
    def test_deterministic_per_seed(self):
        records = read_bank_records(levclear.sample_banks_path(), year=2008)
        config = CalibrationConfig(seed=11, m=3, sigma=0.5, year=2008)
        a = build_system(records, config, 1.0)
        b = build_system(records, config, 1.0)
        assert np.array_equal(a.liabilities, b.liabilities)
        assert np.array_equal(a.liquid, b.liquid)
        assert np.array_equal(a.illiquid, b.illiquid)

    def test_year_filter_and_totals(self):
        records = read_bank_records(levclear.sample_banks_path(), year=2009)
        assert len(records) == 10
        config = CalibrationConfig(seed=1, year=2009)
        system = build_system(records, config, 1.0)
        np.testing.assert_allclose(
            system.liabilities[1:].sum(axis=1),
            [r.total_liabilities for r in records], rtol=0, atol=1e-6)

    def test_interbank_caps_respected(self):
        records = read_bank_records(levclear.sample_banks_path(), year=2007)
        config = CalibrationConfig(seed=5, max_interbank_fraction=0.1, year=2007)
        system = build_system(records, config, 1.0)
        incoming = system.liabilities[1:, 1:].sum(axis=0)
        caps = 0.1 * np.array([r.total_assets for r in records])
        assert np.all(incoming <= caps * (1 + 1e-12))


class TestCounterfactual:
    def build(self, alpha=0.2, cap=15.0):
        records = read_bank_records(levclear.sample_banks_path(), year=2007)
        config = CalibrationConfig(seed=3, alpha=alpha, year=2007)
        system = build_system(records, config, 1.0)
        rl = derive_relative_liabilities(system)
        return system, rl, cap

    def test_hits_the_cap_exactly(self):
        system, rl, cap = self.build()
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, cap)
        assert not adjusted.flagged.any()
        assert not adjusted.floored.any()
        rl2 = derive_relative_liabilities(adjusted.system)
        incoming = adjusted.system.liabilities[:, 1:].sum(axis=0)
        book = adjusted.system.liquid + adjusted.system.illiquid @ np.ones(1)
        equity = book + incoming - rl2.total[1:]
        ratio = rl2.total[1:] / equity
        np.testing.assert_allclose(ratio, cap, rtol=1e-9)

    def test_deleveraging_below_reach_is_floored_and_off_target(self):
        system, rl, _ = self.build()
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, 2.0)
        assert adjusted.floored.any()
        rl2 = derive_relative_liabilities(adjusted.system)
        incoming = adjusted.system.liabilities[:, 1:].sum(axis=0)
        book = adjusted.system.liquid + adjusted.system.illiquid @ np.ones(1)
        equity = book + incoming - rl2.total[1:]
        ratio = rl2.total[1:] / equity
        clean = ~adjusted.floored
        np.testing.assert_allclose(ratio[clean], 2.0, rtol=1e-9)
        assert np.all(ratio[adjusted.floored] > 2.0)

    def test_equity_is_preserved(self):
        system, rl, cap = self.build()
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, cap)
        rl2 = derive_relative_liabilities(adjusted.system)
        incoming_before = system.liabilities[:, 1:].sum(axis=0)
        equity_before = (system.liquid + system.illiquid @ np.ones(1)
                         + incoming_before - rl.total[1:])
        incoming_after = adjusted.system.liabilities[:, 1:].sum(axis=0)
        equity_after = (adjusted.system.liquid
                        + adjusted.system.illiquid @ np.ones(1)
                        + incoming_after - rl2.total[1:])
        np.testing.assert_allclose(equity_after, equity_before, rtol=1e-9)

    def test_already_at_cap_means_zero_adjustment(self):
        system, rl, _ = self.build()
        incoming = system.liabilities[:, 1:].sum(axis=0)
        book = system.liquid + system.illiquid @ np.ones(1)
        equity = book + incoming - rl.total[1:]
        ratios = rl.total[1:] / equity
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, ratios)
        np.testing.assert_allclose(adjusted.adjustment, 0.0, atol=1e-6)

    def test_zero_cap_cancels_obligations_to_floors(self):
        system, rl, _ = self.build()
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, 0.0)
        # desired w is -obligations; the outside column floors the move
        outside_before = system.liabilities[1:, 0]
        assert np.all(adjusted.system.liabilities[1:, 0] >= 0.0)
        interbank = system.liabilities[1:, 1:].sum(axis=1)
        floored_expected = interbank > 1e-12
        assert np.array_equal(adjusted.floored, floored_expected)
        np.testing.assert_allclose(
            adjusted.system.liabilities[1:, 0], 0.0 * outside_before, atol=1e-9)

    def test_proportional_split_keeps_composition(self):
        system, rl, cap = self.build(alpha=0.3)
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, cap)
        before = system.liquid / (system.liquid + system.illiquid[:, 0])
        after = adjusted.system.liquid / (
            adjusted.system.liquid + adjusted.system.illiquid[:, 0])
        np.testing.assert_allclose(after, before, rtol=1e-9)

    def test_liquid_mode_puts_everything_in_cash(self):
        system, rl, cap = self.build(alpha=0.3)
        adjusted = apply_leverage_counterfactual(system, rl, 1.0, cap,
                                                 asset_mode="liquid")
        np.testing.assert_allclose(adjusted.system.illiquid, system.illiquid)
        np.testing.assert_allclose(
            adjusted.system.liquid - system.liquid, adjusted.adjustment)


class TestShock:
    def test_identity_and_wipeout(self):
        rng = np.random.default_rng(2)
        records = read_bank_records(levclear.sample_banks_path(), year=2010)
        system = build_system(records, CalibrationConfig(seed=2, year=2010), 1.0)
        same = apply_shock(system, 0.0)
        assert np.array_equal(same.liquid, system.liquid)
        assert np.array_equal(same.illiquid, system.illiquid)
        gone = apply_shock(system, 1.0)
        assert not gone.liquid.any()
        assert not gone.illiquid.any()

    def test_scalar_scaling(self):
        liab = np.zeros((2, 2))
        liab[1, 0] = 5.0
        system = levclear.FinancialSystem(liab, [100.0], [[40.0]], [1.0])
        shocked = apply_shock(system, 0.1)
        assert shocked.liquid[0] == pytest.approx(90.0)
        assert shocked.illiquid[0, 0] == pytest.approx(36.0)
        assert np.array_equal(shocked.liabilities, system.liabilities)

    def test_rejects_out_of_range(self):
        liab = np.zeros((2, 2))
        system = levclear.FinancialSystem(liab, [1.0], [[1.0]], [1.0])
        with pytest.raises(ValueError):
            apply_shock(system, 1.5)


class TestBankRecords:
    def test_reads_bundled_sample(self):
        records = read_bank_records(levclear.sample_banks_path())
        assert len(records) == 50
        years = {r.year for r in records}
        assert years == {2007, 2008, 2009, 2010, 2011}

    def test_missing_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("firm_id,name,assets\n1,x,2\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_bank_records(path)

    def test_missing_year_rejected(self):
        with pytest.raises(ValueError, match="no bank records"):
            read_bank_records(levclear.sample_banks_path(), year=1999)
