import numpy as np
import pytest

from levclear import demand


@pytest.fixture
def aggregate_market():
    """The unit-price market with a linear leg and an inverse-sqrt tail."""
    return demand.piecewise_linear_sqrt()


class TestPiecewiseLinearSqrt:
    def test_full_price_at_zero(self, aggregate_market):
        assert aggregate_market.evaluate([0.0])[0] == 1.0

    def test_branches_agree_at_knot(self, aggregate_market):
        # both branch formulas evaluate to 2/3 at the knot
        z = 5.0e7
        linear = 1.0 - 2.0 * z / 3.0e8
        tail = 1.0e4 * np.sqrt(2.0) / (3.0 * np.sqrt(z))
        assert abs(linear - 2.0 / 3.0) < 1e-12
        assert abs(tail - 2.0 / 3.0) < 1e-12
        assert abs(aggregate_market.evaluate([z])[0] - 2.0 / 3.0) < 1e-12
        just_above = aggregate_market.evaluate([np.nextafter(z, np.inf)])[0]
        assert abs(just_above - 2.0 / 3.0) < 1e-12

    def test_tail_decays_like_inverse_sqrt(self, aggregate_market):
        big = aggregate_market.evaluate([2.0e8])[0]
        assert big == pytest.approx(1.0e4 * np.sqrt(2.0) / (3.0 * np.sqrt(2.0e8)), rel=1e-12)

    def test_rejects_negative_units(self, aggregate_market):
        with pytest.raises(ValueError, match="nonnegative"):
            aggregate_market.evaluate([-1.0])

    def test_infinite_knot_is_clipped_linear(self):
        market = demand.piecewise_linear_sqrt(max_price=2.0, slope=0.5, knot=np.inf)
        out = market.evaluate(np.array([[0.0], [2.0], [10.0]]))
        assert out.ravel().tolist() == [2.0, 0.0, 0.0]


class TestPowerConcave:
    def test_full_price_at_zero(self):
        market = demand.power_concave([4.0, 9.0])
        assert market.evaluate([0.0, 0.0]).tolist() == [1.0, 1.0]

    def test_positive_at_total_supply(self):
        supply = np.array([3.0, 7.0, 11.0])
        market = demand.power_concave(supply)
        prices = market.evaluate(supply)
        # depth scaling leaves 1 - 1/scale of the price at full liquidation
        assert np.all(prices > 0.59)
        assert np.all(prices < 0.61)

    def test_empty_asset_guard(self):
        market = demand.power_concave([0.0])
        assert market.evaluate([0.0])[0] == 1.0


class TestTabulated:
    def test_interpolates_and_clamps(self):
        market = demand.tabulated([(np.array([0.0, 10.0]), np.array([2.0, 1.0]))])
        assert market.evaluate([5.0])[0] == pytest.approx(1.5)
        assert market.evaluate([25.0])[0] == 1.0

    def test_rejects_increasing_prices(self):
        with pytest.raises(ValueError, match="nonincreasing"):
            demand.tabulated([(np.array([0.0, 1.0]), np.array([1.0, 2.0]))])


class TestValidate:
    def test_paper_family_passes(self):
        supply = np.array([5.0, 8.0])
        market = demand.power_concave(supply)
        holdings = np.array([[2.0, 3.0], [3.0, 5.0]])
        report = demand.validate(market, supply, holdings=holdings)
        assert report.hard_ok
        assert report.monotone_violations == 0
        assert report.positive_at_supply
        assert report.quasiconcave_clean
        assert report.max_price_gap == 0.0

    def test_constant_map_passes(self):
        market = demand.constant(1.0, m=2)
        report = demand.validate(market, np.array([4.0, 4.0]))
        assert report.hard_ok
        assert report.quasiconcave_clean is None

    def test_increasing_map_is_reported(self):
        rising = demand.custom(lambda z: 0.5 + 0.04 * z, max_price=np.array([1.0]))
        report = demand.validate(rising, np.array([10.0]))
        assert report.monotone_violations > 0
        assert not report.hard_ok

    def test_price_hitting_zero_fails_positivity(self):
        market = demand.piecewise_linear_sqrt(max_price=1.0, slope=0.5,
                                              knot=np.inf)
        report = demand.validate(market, np.array([10.0]))
        assert not report.positive_at_supply

    def test_monotone_sampling_agrees_componentwise(self):
        market = demand.piecewise_linear_sqrt(m=3, slope=[1e-3, 1e-2, 0.0],
                                              knot=[500.0, 80.0, np.inf])
        supply = np.array([100.0, 50.0, 9.0])
        zs = np.linspace(0, 1, 33)[:, None] * supply
        prices = market.evaluate(zs)
        assert np.all(np.diff(prices, axis=0) <= 1e-12)
