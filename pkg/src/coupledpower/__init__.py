"""Structural pricing of two coupled electricity markets."""

__version__ = "0.1.0"

from .coupling import EventKey, Regime, SpotOutcome, brute_force_flow, classify, optimal_flow, spot_prices
from .gaussian import (
    GaussianLaw,
    LinearConstraints,
    ProbabilityEstimate,
    conditional_law,
    exponential_tilt,
    mc_rectangle_probability,
    project,
    rectangle_probability,
)
from .model import (
    CouplingSpec,
    FuelSpec,
    MarketSpec,
    MeritOrder,
    Numerics,
    ScenarioSpec,
    StateVector,
    TechnologySpec,
    initial_state,
)
from .montecarlo import McEstimate, Payoff, SampleBatch, mc_price, sample_terminal, simulate_spots, spot_log_moments
from .pricing import (
    EventTerm,
    PriceDecomposition,
    PricingEngine,
    call_value,
    coupling_rate,
    enumerate_events,
    event_term,
    forward_price,
    margrabe_value,
    transmission_right_value,
)
from .scenario import bundled_scenario, dump_scenario, load_scenario
