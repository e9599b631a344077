"""Static model: fuels, technologies, markets, interconnection bounds.

Units are MW for power and EUR/MWh for prices throughout; ``beta`` is per MW.
Technology, fuel and rank indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class FuelSpec:
    """One global fuel with log-OU cost dynamics.

    ``volatility`` is per sqrt(year), ``mean_reversion`` per year.
    """

    name: str
    initial_log_cost: float
    mean_reversion: float
    long_run_log_mean: float
    volatility: float

    def __post_init__(self):
        if not self.mean_reversion > 0:
            raise ValueError(f"fuel {self.name!r}: mean_reversion must be > 0")
        if not self.volatility >= 0:
            raise ValueError(f"fuel {self.name!r}: volatility must be >= 0")


@dataclass(frozen=True)
class TechnologySpec:
    fuel: int
    capacity_const: float = 0.0
    capacity_cos: float = 0.0
    capacity_sin: float = 0.0
    name: str = ""


@dataclass(frozen=True)
class MarketSpec:
    """A zone: technology stack, scarcity coefficients and demand dynamics."""

    technologies: tuple[TechnologySpec, ...]
    alpha: float
    beta: float
    demand_const: float = 0.0
    demand_cos: float = 0.0
    demand_sin: float = 0.0
    demand_mean_reversion: float = 1.0
    demand_vol: float = 0.0
    initial_demand_dev: float = 0.0
    name: str = ""

    def __post_init__(self):
        if len(self.technologies) < 1:
            raise ValueError(f"market {self.name!r}: needs at least one technology")
        if self.beta > 0:
            raise ValueError(f"market {self.name!r}: beta must be <= 0")
        if not self.demand_mean_reversion > 0:
            raise ValueError(f"market {self.name!r}: demand_mean_reversion must be > 0")
        if not self.demand_vol >= 0:
            raise ValueError(f"market {self.name!r}: demand_vol must be >= 0")

    @property
    def n_tech(self) -> int:
        return len(self.technologies)

    @property
    def fuel_ids(self) -> tuple[int, ...]:
        return tuple(tech.fuel for tech in self.technologies)


@dataclass(frozen=True)
class CouplingSpec:
    flow_min: float
    flow_max: float

    def __post_init__(self):
        if not (self.flow_min <= 0.0 <= self.flow_max):
            raise ValueError("coupling bounds must satisfy flow_min <= 0 <= flow_max")


@dataclass(frozen=True)
class Numerics:
    seed: int = 20170421
    quadrature_tolerance: float = 1e-4
    qmc_shifts: int = 12
    qmc_max_points: int = 1 << 17
    mc_samples: int = 1_000_000
    grid_step: float = 1.0
    max_fuels: int = 5
    merit_orders: str = "zonal"

    def __post_init__(self):
        if self.merit_orders not in ("zonal", "global"):
            raise ValueError("merit_orders must be 'zonal' or 'global'")
        if not self.quadrature_tolerance > 0:
            raise ValueError("quadrature_tolerance must be > 0")
        if self.qmc_shifts < 2:
            raise ValueError("qmc_shifts must be >= 2")


@dataclass(frozen=True)
class ScenarioSpec:
    """Full model definition.

    ``correlation`` is the (N+2)x(N+2) correlation of the Wiener drivers
    ordered as (fuel_1..fuel_N, demand_A, demand_B).
    """

    fuels: tuple[FuelSpec, ...]
    market_a: MarketSpec
    market_b: MarketSpec
    coupling: CouplingSpec
    correlation: tuple[tuple[float, ...], ...]
    valuation_time: float = 0.0
    maturity: float = 1.0
    numerics: Numerics = field(default_factory=Numerics)

    def __post_init__(self):
        n = len(self.fuels)
        if n < 1:
            raise ValueError("at least one fuel is required")
        for market in (self.market_a, self.market_b):
            for tech in market.technologies:
                if not 0 <= tech.fuel < n:
                    raise ValueError(f"technology fuel index {tech.fuel} out of range")
        if n > self.market_a.n_tech + self.market_b.n_tech:
            raise ValueError("more fuels than technologies")
        corr = np.asarray(self.correlation, dtype=float)
        if corr.shape != (n + 2, n + 2):
            raise ValueError(f"correlation must be {n + 2}x{n + 2}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ValueError("correlation must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ValueError("correlation must have unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10 * n:
            raise ValueError("correlation must be positive semidefinite")
        if self.market_a.beta == 0.0 and self.market_b.beta == 0.0:
            raise ValueError("beta_A and beta_B cannot both be zero")

    @property
    def n_fuels(self) -> int:
        return len(self.fuels)

    @property
    def dim(self) -> int:
        return len(self.fuels) + 2

    def market(self, zone: str) -> MarketSpec:
        if zone == "A":
            return self.market_a
        if zone == "B":
            return self.market_b
        raise ValueError(f"unknown market {zone!r}")

    def correlation_matrix(self) -> np.ndarray:
        return np.asarray(self.correlation, dtype=float)


@dataclass
class StateVector:
    """Realised state: log fuel costs and the two total demands (MW)."""

    log_fuels: np.ndarray
    demand_a: float
    demand_b: float
    time: float = 0.0

    def __post_init__(self):
        self.log_fuels = np.asarray(self.log_fuels, dtype=float)
        if not (np.all(np.isfinite(self.log_fuels)) and math.isfinite(self.demand_a)
                and math.isfinite(self.demand_b)):
            raise ValueError("state entries must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.log_fuels, [self.demand_a, self.demand_b]])

    @classmethod
    def from_vector(cls, v: Sequence[float], time: float = 0.0) -> "StateVector":
        v = np.asarray(v, dtype=float)
        return cls(v[:-2], float(v[-2]), float(v[-1]), time)


@dataclass(frozen=True)
class MeritOrder:
    """Per-zone technology permutations, cheapest first."""

    perm_a: tuple[int, ...]
    perm_b: tuple[int, ...]


def capacity_at(market: MarketSpec, k: int, t: float) -> float:
    if not 0 <= k < market.n_tech:
        raise IndexError(f"technology index {k} out of range for {market.n_tech} technologies")
    tech = market.technologies[k]
    return (tech.capacity_const + tech.capacity_cos * math.cos(TWO_PI * t)
            + tech.capacity_sin * math.sin(TWO_PI * t))


def capacities(market: MarketSpec, t: float) -> np.ndarray:
    return np.array([capacity_at(market, k, t) for k in range(market.n_tech)])


def total_capacity(market: MarketSpec, t: float) -> float:
    return float(capacities(market, t).sum())


def seasonal_demand_mean(market: MarketSpec, t: float) -> float:
    return (market.demand_const + market.demand_cos * math.cos(TWO_PI * t)
            + market.demand_sin * math.sin(TWO_PI * t))


def scarcity_price(s: float, c_bar: float, d: float, alpha: float, beta: float) -> float:
    """Marginal cost ``s`` inflated by ``exp(alpha + beta * (c_bar - d))``."""
    if not s > 0:
        raise ValueError("marginal cost must be positive")
    return s * math.exp(alpha + beta * (c_bar - d))


def log_scarcity_price(log_s: float, c_bar: float, d: float, alpha: float, beta: float) -> float:
    return log_s + alpha + beta * (c_bar - d)


def zone_order(costs: Sequence[float]) -> tuple[int, ...]:
    """Ascending cost order; equal costs keep base index order."""
    return tuple(int(i) for i in np.argsort(np.asarray(costs), kind="stable"))


def tech_log_costs(market: MarketSpec, log_fuels: np.ndarray) -> np.ndarray:
    return np.asarray(log_fuels)[list(market.fuel_ids)]


def merit_order(state: StateVector, scenario: ScenarioSpec) -> MeritOrder:
    return MeritOrder(
        zone_order(tech_log_costs(scenario.market_a, state.log_fuels)),
        zone_order(tech_log_costs(scenario.market_b, state.log_fuels)),
    )


def cumulative_capacity(market: MarketSpec, order: Sequence[int], t: float) -> np.ndarray:
    """Breakpoints ``[0, c_1, c_1 + c_2, ..., C_bar]`` of the ranked stack."""
    caps = capacities(market, t)[list(order)]
    return np.concatenate([[0.0], np.cumsum(caps)])


def marginality_interval(market: MarketSpec, order: Sequence[int], k: int, t: float) -> tuple[float, float]:
    """Half-open demand interval ``[lower, upper)`` on which rank ``k`` is marginal."""
    if not 0 <= k < market.n_tech:
        raise IndexError(f"rank {k} out of range for {market.n_tech} technologies")
    cum = cumulative_capacity(market, order, t)
    return float(cum[k]), float(cum[k + 1])


def rank_of_demand(cum: np.ndarray, d: float) -> int:
    """Marginal rank for demand ``d``; demand outside the stack clamps to the ends."""
    n = len(cum) - 1
    # number of interior breakpoints <= d
    k = int(np.searchsorted(cum[1:n], d, side="right"))
    return k


def offer_curve(market: MarketSpec, state: StateVector, d: float, t: float) -> tuple[float, int]:
    """Price and marginal rank of the zone's offer curve at demand ``d``."""
    log_costs = tech_log_costs(market, state.log_fuels)
    order = zone_order(log_costs)
    cum = cumulative_capacity(market, order, t)
    k = rank_of_demand(cum, d)
    log_p = log_scarcity_price(log_costs[order[k]], cum[-1], d, market.alpha, market.beta)
    return math.exp(log_p), k


def initial_state(scenario: ScenarioSpec, t: float | None = None) -> StateVector:
    """State at valuation time built from the scenario's initial values."""
    t = scenario.valuation_time if t is None else t
    log_fuels = np.array([f.initial_log_cost for f in scenario.fuels])
    return StateVector(
        log_fuels,
        seasonal_demand_mean(scenario.market_a, t) + scenario.market_a.initial_demand_dev,
        seasonal_demand_mean(scenario.market_b, t) + scenario.market_b.initial_demand_dev,
        t,
    )
