import math
from dataclasses import replace

import numpy as np
import pytest

from coupledpower.model import (
    CouplingSpec,
    FuelSpec,
    MarketSpec,
    Numerics,
    ScenarioSpec,
    StateVector,
    TechnologySpec,
)
from coupledpower.scenario import bundled_scenario, with_flow_bound

TABLE1_COSTS = (10.0, 40.0, 20.0, 35.0)


def identity_corr(n):
    return tuple(tuple(float(i == j) for j in range(n)) for i in range(n))


def table1(flow_max=4000.0, fuel_vol=0.0, demand_vol=0.0, **numerics):
    fuels = tuple(FuelSpec(name, math.log(c), 1.0, math.log(c), fuel_vol)
                  for name, c in zip(("A1", "A2", "B1", "B2"), TABLE1_COSTS))
    ma = MarketSpec((TechnologySpec(0, 48000.0), TechnologySpec(1, 18000.0)), 0.56, -1e-5,
                    demand_const=50000.0, demand_vol=demand_vol, name="A")
    mb = MarketSpec((TechnologySpec(2, 33000.0), TechnologySpec(3, 56000.0)), 0.89, -1e-5,
                    demand_const=45000.0, demand_vol=demand_vol, name="B")
    return ScenarioSpec(fuels, ma, mb, CouplingSpec(-flow_max, flow_max), identity_corr(6),
                        numerics=Numerics(**numerics))


def mean_state(s: ScenarioSpec, t=0.0):
    return StateVector(np.array([f.initial_log_cost for f in s.fuels]),
                       s.market_a.demand_const, s.market_b.demand_const, t)


def random_scenario(rng, n_a=None, n_b=None, shared=False):
    """Small random two-zone scenario; fuels optionally shared across zones."""
    n_a = n_a or int(rng.integers(1, 4))
    n_b = n_b or int(rng.integers(1, 4))
    if shared:
        n_f = int(rng.integers(1, min(n_a + n_b, 4) + 1))
        fa = [int(rng.integers(0, n_f)) for _ in range(n_a)]
        fb = [int(rng.integers(0, n_f)) for _ in range(n_b)]
    else:
        n_f = n_a + n_b
        fa = list(range(n_a))
        fb = list(range(n_a, n_f))
    fuels = tuple(FuelSpec(f"f{i}", float(rng.uniform(2, 4)), 1.0, 3.0, 0.3) for i in range(n_f))
    ta = tuple(TechnologySpec(f, float(rng.uniform(5e3, 4e4))) for f in fa)
    tb = tuple(TechnologySpec(f, float(rng.uniform(5e3, 4e4))) for f in fb)
    ma = MarketSpec(ta, float(rng.uniform(0, 1)), -float(rng.uniform(0, 3e-5)),
                    demand_const=float(sum(t.capacity_const for t in ta) * rng.uniform(0.4, 0.9)),
                    demand_vol=3000.0)
    mb = MarketSpec(tb, float(rng.uniform(0, 1)), -float(rng.uniform(5e-6, 3e-5)),
                    demand_const=float(sum(t.capacity_const for t in tb) * rng.uniform(0.4, 0.9)),
                    demand_vol=3000.0)
    e = float(rng.uniform(0, 1e4))
    return ScenarioSpec(fuels, ma, mb, CouplingSpec(-float(rng.uniform(0, 1e4)), e), identity_corr(n_f + 2))


def random_states(rng, s: ScenarioSpec, n, fuel_sd=0.4, demand_sd=6000.0):
    x = np.array([f.initial_log_cost for f in s.fuels]) + rng.normal(0, fuel_sd, (n, s.n_fuels))
    da = s.market_a.demand_const + rng.normal(0, demand_sd, n)
    db = s.market_b.demand_const + rng.normal(0, demand_sd, n)
    return np.column_stack([x, da, db])


@pytest.fixture
def t1():
    return table1()


@pytest.fixture(scope="session")
def t1_bundled():
    return bundled_scenario("table1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
