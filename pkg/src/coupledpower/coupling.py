"""Interconnection flow, regime classification and coupled spot prices."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    MarketSpec,
    MeritOrder,
    ScenarioSpec,
    StateVector,
    cumulative_capacity,
    rank_of_demand,
    tech_log_costs,
    zone_order,
)


class Regime(enum.IntEnum):
    """Coupling regimes in tie-break priority order."""

    SATURATED_A_TO_B = 0   # A1: flow at flow_max, A still cheaper
    SATURATED_B_TO_A = 1   # A2: flow at flow_min, B still cheaper
    COUPLED_DISC_A = 2     # A3^A: A's residual demand sits on a breakpoint of A
    COUPLED_DISC_B = 3     # A3^B
    COUPLED_INTERIOR = 4   # A3^C

    @property
    def coupled(self) -> bool:
        return self >= Regime.COUPLED_DISC_A

    @property
    def short(self) -> str:
        return ("A1", "A2", "A3A", "A3B", "A3C")[int(self)]


@dataclass(frozen=True)
class EventKey:
    """One cell of the pricing partition; ``k``/``l`` are 0-based ranks.

    ``global_order`` is set only when events come from global fuel orderings.
    """

    order: MeritOrder
    k: int
    l: int
    regime: Regime
    global_order: tuple[int, ...] | None = None

    def label(self) -> str:
        pa = "".join(str(i + 1) for i in self.order.perm_a)
        pb = "".join(str(i + 1) for i in self.order.perm_b)
        return f"{self.regime.short}[A:{pa} B:{pb} k={self.k + 1} l={self.l + 1}]"


@dataclass(frozen=True)
class SpotOutcome:
    flow: float
    regime: Regime
    key: EventKey
    price_a: float
    price_b: float


@dataclass(frozen=True)
class _Stack:
    """A zone's offer curve at one state, in rank order."""

    log_costs: np.ndarray  # ranked
    cum: np.ndarray
    alpha: float
    beta: float

    @classmethod
    def build(cls, market: MarketSpec, log_fuels: np.ndarray, t: float) -> tuple["_Stack", tuple[int, ...]]:
        log_costs = tech_log_costs(market, log_fuels)
        order = zone_order(log_costs)
        stack = cls(log_costs[list(order)], cumulative_capacity(market, order, t),
                    market.alpha, market.beta)
        return stack, order

    @property
    def c_bar(self) -> float:
        return float(self.cum[-1])

    def log_price(self, k: int, d: float) -> float:
        return float(self.log_costs[k] + self.alpha + self.beta * (self.cum[-1] - d))

    def rank(self, d: float) -> int:
        return rank_of_demand(self.cum, d)

    def offer(self, d: float) -> float:
        return self.log_price(self.rank(d), d)

    def previous_rank(self, k: int) -> int | None:
        """Nearest rank below ``k`` whose interval is not empty."""
        for j in range(k - 1, -1, -1):
            if j == 0 or self.cum[j + 1] > self.cum[j]:
                return j
        return None


def _stacks(state: StateVector, scenario: ScenarioSpec, t: float):
    sa, pa = _Stack.build(scenario.market_a, state.log_fuels, t)
    sb, pb = _Stack.build(scenario.market_b, state.log_fuels, t)
    return sa, sb, MeritOrder(pa, pb)


def interior_root(sa: _Stack, sb: _Stack, k: int, l: int, da: float, db: float) -> float:
    """Flow equalising the two continuous price branches (k in A, l in B)."""
    num = (sa.log_costs[k] - sb.log_costs[l] + sa.alpha - sb.alpha
           + sa.beta * (sa.c_bar - da) - sb.beta * (sb.c_bar - db))
    return float(num / (sa.beta + sb.beta))


def _solve(state: StateVector, scenario: ScenarioSpec, t: float) -> SpotOutcome:
    sa, sb, order = _stacks(state, scenario, t)
    da, db = state.demand_a, state.demand_b
    lo, hi = scenario.coupling.flow_min, scenario.coupling.flow_max

    def outcome(flow, regime, k, l, la, lb):
        pa, pb = math.exp(la), math.exp(lb)
        if regime.coupled:
            pb = pa
        return SpotOutcome(flow, regime, EventKey(order, k, l, regime), pa, pb)

    ka, lb_ = sa.rank(da + hi), sb.rank(db - hi)
    la, lb = sa.log_price(ka, da + hi), sb.log_price(lb_, db - hi)
    if la <= lb:
        return outcome(hi, Regime.SATURATED_A_TO_B, ka, lb_, la, lb)
    ka, lb_ = sa.rank(da + lo), sb.rank(db - lo)
    la, lb = sa.log_price(ka, da + lo), sb.log_price(lb_, db - lo)
    if la >= lb:
        return outcome(lo, Regime.SATURATED_B_TO_A, ka, lb_, la, lb)

    # Interior breakpoints of h(e) = P_A(da + e) - P_B(db - e) inside (lo, hi).
    points: dict[float, list] = {}
    for j in range(1, len(sa.cum) - 1):
        e = float(sa.cum[j] - da)
        if lo < e < hi:
            points.setdefault(e, [None, None])
            if points[e][0] is None:
                points[e][0] = j
    for j in range(1, len(sb.cum) - 1):
        e = float(db - sb.cum[j])
        if lo < e < hi:
            points.setdefault(e, [None, None])
            if points[e][1] is None:
                points[e][1] = j
    grid = [lo] + sorted(points) + [hi]

    prev = None
    for s in range(len(grid) - 1):
        left, right = grid[s], grid[s + 1]
        mid = 0.5 * (left + right)
        k, l = sa.rank(da + mid), sb.rank(db - mid)
        if prev is not None:
            kp, lp = prev
            h_left = sa.log_price(kp, da + left) - sb.log_price(lp, db - left)
            h_right = sa.log_price(k, da + left) - sb.log_price(l, db - left)
            if h_left <= 0.0 <= h_right:
                ja, jb = points[left]
                if ja is not None:
                    ka = sa.rank(float(sa.cum[ja]))
                    lb_ = sb.rank(db - left)
                    common = sb.log_price(lb_, db - left)
                    return outcome(left, Regime.COUPLED_DISC_A, ka, lb_, common, common)
                lb_ = sb.rank(float(sb.cum[jb]))
                ka = sa.rank(da + left)
                common = sa.log_price(ka, da + left)
                return outcome(left, Regime.COUPLED_DISC_B, ka, lb_, common, common)
        g = interior_root(sa, sb, k, l, da, db)
        if left < g < right:
            common = sa.log_price(k, da + g)
            return outcome(g, Regime.COUPLED_INTERIOR, k, l, common, common)
        prev = (k, l)

    # Only reachable when a flow bound sits exactly on a breakpoint, which puts
    # the crossing on the bound itself.
    mid = 0.5 * (grid[0] + grid[1])
    k0, l0 = sa.rank(da + mid), sb.rank(db - mid)
    if sa.log_price(k0, da + lo) >= sb.log_price(l0, db - lo):
        k, l = sa.rank(da + lo), sb.rank(db - lo)
        return outcome(lo, Regime.SATURATED_B_TO_A, k, l,
                       sa.log_price(k, da + lo), sb.log_price(l, db - lo))
    k, l = sa.rank(da + hi), sb.rank(db - hi)
    return outcome(hi, Regime.SATURATED_A_TO_B, k, l,
                   sa.log_price(k, da + hi), sb.log_price(l, db - hi))


def spot_prices(state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> SpotOutcome:
    """Coupled spot outcome (flow, regime, marginal ranks, both prices)."""
    return _solve(state, scenario, state.time if t is None else t)


def classify(state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> EventKey:
    return spot_prices(state, scenario, t).key


def optimal_flow(state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> float:
    return spot_prices(state, scenario, t).flow


def uncoupled_prices(state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> tuple[float, float]:
    t = state.time if t is None else t
    sa, sb, _ = _stacks(state, scenario, t)
    return math.exp(sa.offer(state.demand_a)), math.exp(sb.offer(state.demand_b))


def grid_prices(state: StateVector, scenario: ScenarioSpec, flows, t: float | None = None):
    """Offer-curve prices ``(P_A(D_A + e), P_B(D_B - e))`` for an array of flows."""
    t = state.time if t is None else t
    sa, sb, _ = _stacks(state, scenario, t)
    e = np.atleast_1d(np.asarray(flows, dtype=float))
    dA = state.demand_a + e
    dB = state.demand_b - e
    ka = np.searchsorted(sa.cum[1:-1], dA, side="right")
    kb = np.searchsorted(sb.cum[1:-1], dB, side="right")
    pa = np.exp(sa.log_costs[ka] + sa.alpha + sa.beta * (sa.c_bar - dA))
    pb = np.exp(sb.log_costs[kb] + sb.alpha + sb.beta * (sb.c_bar - dB))
    return pa, pb


def brute_force_flow(state: StateVector, scenario: ScenarioSpec, t: float | None = None,
                     grid_step: float | None = None) -> float:
    """Literal grid evaluation of the sup/inf flow definition.

    The grid runs from ``flow_min`` in steps of ``grid_step`` and always
    contains 0 and ``flow_max``.
    """
    step = scenario.numerics.grid_step if grid_step is None else grid_step
    if not step > 0:
        raise ValueError("grid_step must be > 0")
    lo, hi = scenario.coupling.flow_min, scenario.coupling.flow_max
    n = int(math.floor((hi - lo) / step + 1e-9))
    grid = np.unique(np.concatenate([lo + step * np.arange(n + 1), [0.0, hi]]))
    pa, pb = grid_prices(state, scenario, grid, t)
    p0a, p0b = grid_prices(state, scenario, [0.0], t)
    if p0a[0] <= p0b[0]:
        feasible = grid[pa <= pb]
        return float(feasible.max())
    feasible = grid[pa >= pb]
    return float(feasible.min())


def event_inequalities(key: EventKey, state: StateVector, scenario: ScenarioSpec,
                       t: float | None = None) -> dict[str, bool]:
    """Evaluate the defining inequalities of ``key`` at ``state``.

    Saturated regimes use the three-line characterisation with the flow
    bound; coupled regimes use the closed-form flow of their case.  The
    merit-order condition is reported as ``"order"``.
    """
    t = state.time if t is None else t
    sa, sb, order = _stacks(state, scenario, t)
    da, db = state.demand_a, state.demand_b
    lo, hi = scenario.coupling.flow_min, scenario.coupling.flow_max
    k, l = key.k, key.l
    out = {"order": order == key.order}

    def in_interval(stack: _Stack, j: int, d: float, strict: bool = False) -> bool:
        n = len(stack.cum) - 1
        low = -math.inf if j == 0 else stack.cum[j]
        up = math.inf if j == n - 1 else stack.cum[j + 1]
        if strict:
            return low < d < up
        return low <= d < up

    regime = key.regime
    if regime in (Regime.SATURATED_A_TO_B, Regime.SATURATED_B_TO_A):
        e = hi if regime is Regime.SATURATED_A_TO_B else lo
        out["interval_a"] = in_interval(sa, k, da + e)
        out["interval_b"] = in_interval(sb, l, db - e)
        diff = sa.log_price(k, da + e) - sb.log_price(l, db - e)
        out["price_order"] = diff <= 0 if regime is Regime.SATURATED_A_TO_B else diff >= 0
    elif regime is Regime.COUPLED_DISC_A:
        kp = sa.previous_rank(k) if k > 0 else None
        if kp is None:
            out["exists"] = False
            return out
        g = float(sa.cum[k] - da)
        out["P1-1"] = lo < g < hi
        out["P1-2"] = in_interval(sb, l, db - g)
        pb = sb.log_price(l, db - g)
        out["P1-3"] = sa.log_price(kp, da + g) <= pb
        out["P1-4"] = sa.log_price(k, da + g) >= pb
    elif regime is Regime.COUPLED_DISC_B:
        lp = sb.previous_rank(l) if l > 0 else None
        if lp is None:
            out["exists"] = False
            return out
        g = float(db - sb.cum[l])
        out["P2-1"] = lo < g < hi
        out["P2-2"] = in_interval(sa, k, da + g)
        pa = sa.log_price(k, da + g)
        out["P2-3"] = sb.log_price(lp, db - g) <= pa
        out["P2-4"] = sb.log_price(l, db - g) >= pa
    else:
        g = interior_root(sa, sb, k, l, da, db)
        out["P3-1"] = lo < g < hi
        out["P3-2"] = in_interval(sa, k, da + g, strict=True)
        out["P3-3"] = in_interval(sb, l, db - g, strict=True)
    return out


def event_holds(key: EventKey, state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> bool:
    return all(event_inequalities(key, state, scenario, t).values())


def closed_form_flow(key: EventKey, state: StateVector, scenario: ScenarioSpec, t: float | None = None) -> float:
    """Flow implied by the event's own formula (bound, breakpoint or root)."""
    t = state.time if t is None else t
    sa, sb, _ = _stacks(state, scenario, t)
    if key.regime is Regime.SATURATED_A_TO_B:
        return scenario.coupling.flow_max
    if key.regime is Regime.SATURATED_B_TO_A:
        return scenario.coupling.flow_min
    if key.regime is Regime.COUPLED_DISC_A:
        return float(sa.cum[key.k] - state.demand_a)
    if key.regime is Regime.COUPLED_DISC_B:
        return float(state.demand_b - sb.cum[key.l])
    return interior_root(sa, sb, key.k, key.l, state.demand_a, state.demand_b)
