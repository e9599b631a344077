"""Monte Carlo oracle: exact terminal sampling and payoff averages.

Draws come in fixed-size blocks, block ``b`` using a Philox stream keyed by
``(seed, b)``, so a batch depends only on the seed and its size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .gaussian import conditional_law, factor_covariance
from .model import ScenarioSpec, StateVector, capacities, initial_state

BLOCK = 1 << 16


@dataclass
class SampleBatch:
    states: np.ndarray  # (n, N + 2)
    seed: int
    t: float
    T: float

    @property
    def n(self) -> int:
        return self.states.shape[0]


@dataclass(frozen=True)
class McEstimate:
    value: float
    standard_error: float
    n: int


@dataclass
class SpotSample:
    """Coupled spot outcomes for every state of a batch."""

    flow: np.ndarray
    regime: np.ndarray
    k: np.ndarray
    l: np.ndarray
    price_a: np.ndarray
    price_b: np.ndarray
    perm_a: np.ndarray
    perm_b: np.ndarray
    t: float
    T: float

    @property
    def n(self) -> int:
        return self.flow.shape[0]


@dataclass(frozen=True)
class SpotMoments:
    vol_a: float
    vol_b: float
    correlation: float
    mean_a: float
    mean_b: float
    degenerate: bool = False


@dataclass(frozen=True)
class Payoff:
    """``kind`` is one of forward, call, ptr, coupling."""

    kind: str
    market: str = "A"
    strike: float = 0.0
    direction: str = "both"

    def __post_init__(self):
        if self.kind not in ("forward", "call", "ptr", "coupling"):
            raise ValueError(f"unknown payoff {self.kind!r}")
        if self.market not in ("A", "B"):
            raise ValueError(f"unknown market {self.market!r}")
        if self.direction not in ("both", "A_to_B", "B_to_A"):
            raise ValueError(f"unknown direction {self.direction!r}")

    def evaluate(self, spots: SpotSample) -> np.ndarray:
        price = spots.price_a if self.market == "A" else spots.price_b
        if self.kind == "forward":
            return price
        if self.kind == "call":
            return np.maximum(price - self.strike, 0.0)
        if self.kind == "coupling":
            return (spots.regime >= 2).astype(float)
        spread = spots.price_b - spots.price_a
        if self.direction == "A_to_B":
            return np.maximum(spread, 0.0)
        if self.direction == "B_to_A":
            return np.maximum(-spread, 0.0)
        return np.abs(spread)


def sample_terminal(scenario: ScenarioSpec, n: int, seed: int | None = None, state: StateVector | None = None,
                    t: float | None = None, T: float | None = None) -> SampleBatch:
    """Exact draws of V_T given the state at ``t``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = scenario.valuation_time if t is None else t
    T = scenario.maturity if T is None else T
    seed = scenario.numerics.seed if seed is None else seed
    state = initial_state(scenario, t) if state is None else state
    law = conditional_law(state, t, T, scenario)
    F = factor_covariance(law.covariance)
    out = np.empty((n, law.dim))
    for b, start in enumerate(range(0, n, BLOCK)):
        m = min(BLOCK, n - start)
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, b])))
        z = gen.standard_normal((m, law.dim))
        out[start:start + m] = law.mean + z @ F.T
    return SampleBatch(out, seed, t, T)


def simulate_spots(scenario: ScenarioSpec, batch: SampleBatch) -> SpotSample:
    N = scenario.n_fuels
    x = batch.states
    ma, mb = scenario.market_a, scenario.market_b
    res = kernels.batch_spot(
        np.ascontiguousarray(x[:, list(ma.fuel_ids)]), np.ascontiguousarray(x[:, list(mb.fuel_ids)]),
        np.ascontiguousarray(capacities(ma, batch.T)), np.ascontiguousarray(capacities(mb, batch.T)),
        np.ascontiguousarray(x[:, N]), np.ascontiguousarray(x[:, N + 1]),
        ma.alpha, ma.beta, mb.alpha, mb.beta,
        scenario.coupling.flow_min, scenario.coupling.flow_max,
    )
    return SpotSample(*res, t=batch.t, T=batch.T)


def _std(v: np.ndarray) -> float:
    # shifting by a sample keeps constant inputs at exactly zero spread
    return float(np.std(v - v[0], ddof=1))


def _mean_se(v: np.ndarray) -> McEstimate:
    n = v.shape[0]
    mean = float(np.sum(v) / n)
    se = float(_std(v) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean, se, n)


def mc_price(payoff: Payoff, spots: SpotSample) -> McEstimate:
    if spots.n < 1:
        raise ValueError("empty sample")
    return _mean_se(payoff.evaluate(spots))


def spot_log_moments(spots: SpotSample) -> SpotMoments:
    """Annualised log-spot vols, their correlation and mean spot levels.

    A zero vol leaves the correlation undefined; it is then reported as 1
    and ``degenerate`` is set.
    """
    if np.any(spots.price_a <= 0) or np.any(spots.price_b <= 0):
        raise ValueError("simulated spot prices must be positive")
    tau = spots.T - spots.t
    la, lb = np.log(spots.price_a), np.log(spots.price_b)
    if spots.n < 2:
        sa = sb = 0.0
    else:
        sa, sb = _std(la), _std(lb)
    scale = 1.0 / math.sqrt(tau) if tau > 0 else 0.0
    degenerate = sa == 0.0 or sb == 0.0
    if degenerate:
        rho = 1.0
    else:
        rho = float(np.clip(np.corrcoef(la, lb)[0, 1], -1.0, 1.0))
    return SpotMoments(sa * scale, sb * scale, rho, float(spots.price_a.mean()), float(spots.price_b.mean()),
                       degenerate)


def event_frequencies(spots: SpotSample) -> dict:
    """Counts per realised cell ``(perm_a, perm_b, k, l, regime)``."""
    cols = [spots.perm_a, spots.perm_b, spots.k[:, None], spots.l[:, None], spots.regime[:, None].astype(np.int64)]
    table = np.concatenate(cols, axis=1)
    uniq, counts = np.unique(table, axis=0, return_counts=True)
    na = spots.perm_a.shape[1]
    nb = spots.perm_b.shape[1]
    out = {}
    for row, c in zip(uniq, counts):
        key = (tuple(int(i) for i in row[:na]), tuple(int(i) for i in row[na:na + nb]),
               int(row[na + nb]), int(row[na + nb + 1]), int(row[na + nb + 2]))
        out[key] = int(c)
    return out


def run(scenario: ScenarioSpec, payoffs, n: int | None = None, seed: int | None = None) -> dict:
    """Convenience: sample, evaluate spots once, price every payoff."""
    n = scenario.numerics.mc_samples if n is None else n
    spots = simulate_spots(scenario, sample_terminal(scenario, n, seed))
    return {p: mc_price(p, spots) for p in payoffs}
