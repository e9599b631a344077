import math

import numpy as np
import pytest

from coupledpower.gaussian import conditional_law
from coupledpower.model import (
    CouplingSpec,
    FuelSpec,
    MarketSpec,
    ScenarioSpec,
    StateVector,
    TechnologySpec,
    initial_state,
)
from coupledpower.montecarlo import (
    BLOCK,
    Payoff,
    mc_price,
    run,
    sample_terminal,
    simulate_spots,
    spot_log_moments,
)
from coupledpower.pricing import PricingEngine
from coupledpower.scenario import bundled_scenario, with_flow_bound

from conftest import identity_corr, table1

DET_PRICE = 35.0 * math.exp(0.47)


def test_zero_vol_samples_equal_mean():
    s = table1(4000.0)
    b = sample_terminal(s, 1000, seed=1)
    law = conditional_law(initial_state(s), 0.0, 1.0, s)
    assert np.all(b.states == law.mean)


def test_zero_vol_forward_exact():
    s = table1(4000.0)
    spots = simulate_spots(s, sample_terminal(s, 500, seed=1))
    est = mc_price(Payoff("forward", "A"), spots)
    assert est.value == pytest.approx(DET_PRICE, rel=1e-14)
    assert est.standard_error == 0.0


def test_same_seed_same_batch():
    s = bundled_scenario("table1_highdem_highfuel")
    a = sample_terminal(s, BLOCK + 17, seed=99)
    b = sample_terminal(s, BLOCK + 17, seed=99)
    c = sample_terminal(s, BLOCK + 17, seed=100)
    np.testing.assert_array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_prefix_stable_across_sizes():
    # block b is keyed by (seed, b), so a larger batch extends a smaller one
    s = bundled_scenario("table1_highdem_highfuel")
    small = sample_terminal(s, 1000, seed=5)
    big = sample_terminal(s, 2 * BLOCK, seed=5)
    np.testing.assert_array_equal(small.states, big.states[:1000])


def test_sample_covariance_matches_law():
    s = bundled_scenario("table1_highdem_highfuel")
    n = 1_000_000
    x = sample_terminal(s, n, seed=7).states
    law = conditional_law(initial_state(s), s.valuation_time, s.maturity, s)
    c = x - law.mean
    for i in range(s.dim):
        for j in range(i, s.dim):
            prod = c[:, i] * c[:, j]
            se = prod.std(ddof=1) / math.sqrt(n)
            assert abs(prod.mean() - law.covariance[i, j]) <= 5 * se, (i, j)


def test_bad_sample_count():
    with pytest.raises(ValueError):
        sample_terminal(table1(), 0)


def test_payoff_validation():
    with pytest.raises(ValueError):
        Payoff("put")
    with pytest.raises(ValueError):
        Payoff("forward", market="C")
    with pytest.raises(ValueError):
        Payoff("ptr", direction="up")


def test_ptr_vanishes_with_huge_capacity():
    s = with_flow_bound(bundled_scenario("table1_highdem_highfuel"), 1e6)
    out = run(s, [Payoff("ptr"), Payoff("coupling")], n=200_000, seed=3)
    assert out[Payoff("ptr")].value == 0.0
    assert out[Payoff("coupling")].value == 1.0


def test_coupling_indicator_matches_analytic():
    s = with_flow_bound(bundled_scenario("table1_highdem_highfuel"), 4000.0)
    mc = run(s, [Payoff("coupling")], n=1_000_000, seed=8)[Payoff("coupling")]
    a = PricingEngine(s).coupling_rate()
    assert abs(mc.value - a.total) <= 3 * mc.standard_error + a.quadrature_error


def test_zero_vol_moments_flagged():
    s = table1(4000.0)
    m = spot_log_moments(simulate_spots(s, sample_terminal(s, 100)))
    assert m.degenerate
    assert (m.vol_a, m.vol_b, m.correlation) == (0.0, 0.0, 1.0)


def test_lognormal_single_market_vol():
    # one fuel, flat offer curve, no interconnection: price = S e^alpha
    a, sigma, T = 1.3, 0.4, 0.75
    f = (FuelSpec("f", math.log(30.0), a, math.log(30.0), sigma),)
    m = MarketSpec((TechnologySpec(0, 1e5),), 0.2, 0.0, demand_const=5e4, demand_vol=5e3)
    mb = MarketSpec((TechnologySpec(0, 1e5),), 0.2, -1e-5, demand_const=5e4, demand_vol=5e3)
    s = ScenarioSpec(f, m, mb, CouplingSpec(0.0, 0.0), identity_corr(3), maturity=T)
    n = 400_000
    mom = spot_log_moments(simulate_spots(s, sample_terminal(s, n, seed=2)))
    expected = sigma * math.sqrt(-math.expm1(-2 * a * T) / (2 * a * T))
    # sd of a sample std is about std / sqrt(2n)
    assert abs(mom.vol_a - expected) <= 5 * expected / math.sqrt(2 * n)


def test_high_coupling_correlation_near_one():
    s = with_flow_bound(bundled_scenario("table1_highdem_highfuel"), 20000.0)
    mom = spot_log_moments(simulate_spots(s, sample_terminal(s, 100_000, seed=1)))
    assert mom.correlation > 0.99


def test_nonpositive_spot_rejected():
    s = table1(4000.0)
    spots = simulate_spots(s, sample_terminal(s, 10))
    spots.price_a[0] = 0.0
    with pytest.raises(ValueError):
        spot_log_moments(spots)


def test_state_override():
    s = bundled_scenario("table1_highdem_highfuel")
    st_ = StateVector(np.log([12.0, 38.0, 22.0, 36.0]), 52000.0, 44000.0)
    b = sample_terminal(s, 200_000, seed=1, state=st_)
    law = conditional_law(st_, s.valuation_time, s.maturity, s)
    se = b.states.std(axis=0) / math.sqrt(b.n)
    assert np.all(np.abs(b.states.mean(axis=0) - law.mean) <= 5 * se)
