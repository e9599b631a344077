import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import mean_state, random_scenario, random_states, table1
from coupledpower.coupling import (
    EventKey,
    Regime,
    brute_force_flow,
    classify,
    closed_form_flow,
    event_holds,
    event_inequalities,
    grid_prices,
    optimal_flow,
    spot_prices,
    uncoupled_prices,
)
from coupledpower.model import CouplingSpec, StateVector


def test_table1_4gw(t1):
    out = spot_prices(mean_state(t1), t1)
    assert out.regime is Regime.COUPLED_DISC_A
    assert (out.key.k, out.key.l) == (1, 1)
    assert out.flow == -2000.0
    assert out.price_a == out.price_b
    assert out.price_a == pytest.approx(35 * math.exp(0.47), rel=1e-13)


def test_table1_1gw():
    s = table1(1000.0)
    out = spot_prices(mean_state(s), s)
    assert out.regime is Regime.SATURATED_B_TO_A
    assert (out.key.k, out.key.l) == (1, 1)
    assert out.flow == -1000.0
    assert out.price_a == pytest.approx(40 * math.exp(0.39), rel=1e-13)
    assert out.price_b == pytest.approx(35 * math.exp(0.46), rel=1e-13)
    assert out.price_a - out.price_b == pytest.approx(3.6366422804988403, rel=1e-12)


def test_zero_ntc_is_uncoupled():
    s = table1(0.0)
    st_ = mean_state(s)
    out = spot_prices(st_, s)
    assert out.regime is Regime.SATURATED_B_TO_A and out.flow == 0.0
    assert out.price_a == pytest.approx(40 * math.exp(0.40), rel=1e-13)
    assert out.price_b == pytest.approx(35 * math.exp(0.45), rel=1e-13)
    assert (out.price_a, out.price_b) == uncoupled_prices(st_, s)
    assert brute_force_flow(st_, s) == 0.0


def test_symmetric_markets_no_flow(t1):
    s = replace(t1, market_b=replace(t1.market_a, name="B"))
    st_ = StateVector(np.log([10.0, 40.0, 20.0, 35.0]), 50000.0, 50000.0)
    out = spot_prices(st_, s)
    assert out.flow == 0.0 or abs(out.flow) < 1e-9
    assert out.price_a == out.price_b
    assert abs(brute_force_flow(st_, s, grid_step=1.0)) <= 1.0


def test_brute_force_table1(t1):
    st_ = mean_state(t1)
    g = brute_force_flow(st_, t1, grid_step=1.0)
    assert abs(g - optimal_flow(st_, t1)) <= 1.0
    pa, pb = grid_prices(st_, t1, [g])
    # the grid lands on A's breakpoint, where B's price is the coupled one
    assert abs(pb[0] - 55.99979676260761) < 0.01
    assert classify(st_, t1).regime is Regime.COUPLED_DISC_A


def test_brute_force_rejects_bad_step(t1):
    with pytest.raises(ValueError):
        brute_force_flow(mean_state(t1), t1, grid_step=0.0)


def test_interior_regime_closed_form(t1):
    # the crossing falls strictly inside both second segments
    st_ = StateVector(np.log([10.0, 36.0, 20.0, 35.0]), 47000.0, 45000.0)
    out = spot_prices(st_, t1)
    assert out.regime is Regime.COUPLED_INTERIOR
    assert out.flow == pytest.approx(closed_form_flow(out.key, st_, t1), rel=1e-12)
    assert event_holds(out.key, st_, t1)


def test_disc_b_regime():
    s = table1(8000.0)
    # A's curve crosses B's inside B's jump
    st_ = StateVector(np.log([10.0, 40.0, 20.0, 45.0]), 44000.0, 38000.0)
    out = spot_prices(st_, s)
    assert out.regime is Regime.COUPLED_DISC_B
    assert out.flow == 38000.0 - 33000.0
    assert event_holds(out.key, st_, s)


def _siblings(key):
    return [EventKey(key.order, k, l, r) for k in range(3) for l in range(3) for r in Regime
            if (k, l, r) != (key.k, key.l, key.regime)]


@pytest.mark.parametrize("shared", [False, True])
def test_exhaustive_disjoint(shared):
    rng = np.random.default_rng(7 + shared)
    checked = 0
    for _ in range(25):
        s = random_scenario(rng, shared=shared)
        for v in random_states(rng, s, 40):
            st_ = StateVector.from_vector(v)
            out = spot_prices(st_, s)
            assert s.coupling.flow_min <= out.flow <= s.coupling.flow_max
            assert event_holds(out.key, st_, s)
            for sib in _siblings(out.key):
                if sib.k >= s.market_a.n_tech or sib.l >= s.market_b.n_tech:
                    continue
                assert not event_holds(sib, st_, s), (out.key.label(), sib.label())
            checked += 1
    assert checked == 1000


def test_event_inequality_equivalence():
    rng = np.random.default_rng(11)
    seen = set()
    for _ in range(40):
        s = random_scenario(rng)
        for v in random_states(rng, s, 50):
            st_ = StateVector.from_vector(v)
            out = spot_prices(st_, s)
            seen.add(out.regime)
            checks = event_inequalities(out.key, st_, s)
            assert all(checks.values()), checks
            if out.regime.coupled:
                g = closed_form_flow(out.key, st_, s)
                assert abs(out.flow - g) <= 1e-9 * max(1.0, abs(g))
                assert out.price_a == out.price_b
    assert seen == set(Regime)


def test_oracle_agreement_and_price_order():
    rng = np.random.default_rng(5)
    for _ in range(10):
        s = random_scenario(rng)
        for v in random_states(rng, s, 10):
            st_ = StateVector.from_vector(v)
            out = spot_prices(st_, s)
            g = brute_force_flow(st_, s, grid_step=1.0)
            assert abs(g - out.flow) <= 1.0 + 1e-9
            pa, pb = grid_prices(st_, s, [g])
            # price change over one grid step, plus a jump when the step crosses a breakpoint
            qa, qb = grid_prices(st_, s, [out.flow])
            if out.regime is Regime.SATURATED_A_TO_B:
                assert out.price_a <= out.price_b
            elif out.regime is Regime.SATURATED_B_TO_A:
                assert out.price_a >= out.price_b
            ua, ub = uncoupled_prices(st_, s)
            assert min(out.price_a, out.price_b) >= min(ua, ub) * (1 - 1e-12)
            assert max(out.price_a, out.price_b) <= max(ua, ub) * (1 + 1e-12)
            if not out.regime.coupled:
                assert qa[0] == pytest.approx(out.price_a, rel=1e-12)
                assert qb[0] == pytest.approx(out.price_b, rel=1e-12)


def test_oracle_price_within_step_table1(t1):
    st_ = mean_state(t1)
    g = brute_force_flow(st_, t1, grid_step=1.0)
    out = spot_prices(st_, t1)
    pa, pb = grid_prices(st_, t1, [g])
    # grid flow lands on the breakpoint itself, where B sets the price
    assert abs(pb[0] - out.price_b) < 0.01


def test_flow_bounds_validated():
    with pytest.raises(ValueError):
        CouplingSpec(100.0, 200.0)
    CouplingSpec(0.0, 0.0)


def test_labels_are_one_based(t1):
    key = classify(mean_state(t1), t1)
    assert key.label() == "A3A[A:12 B:12 k=2 l=2]"
