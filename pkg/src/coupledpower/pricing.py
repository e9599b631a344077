"""Event partition, per-event tilts and constraint systems, and the pricers.

Every price is a sum over events ``(order, k, l, regime)`` of terms
``E[exp(lam.V_T + eta) 1_event(V_T)]``, each evaluated as a tilt factor
times a Gaussian box probability. The state vector is
``V = (x_0..x_{N-1}, D_A, D_B)`` with ``x`` the log fuel costs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .coupling import EventKey, Regime, spot_prices
from .gaussian import (
    GaussianLaw,
    LinearConstraints,
    conditional_law,
    exponential_tilt,
    project,
    rectangle_probability,
)
from .model import MarketSpec, MeritOrder, ScenarioSpec, StateVector, capacities, initial_state

PRUNE_FRACTION = 0.01

# seed tags, one stream per (event, quantity)
_TAG_PROB = 0
_TAG_LEG = {"A": 1, "B": 2, "common": 3}
_TAG_CALL = 10
_TAG_CALL_PROB = 20


class EnumerationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EventTerm:
    """Constraint system and price legs of one event.

    ``legs`` maps a role (``"A"``, ``"B"`` or ``"common"``) to ``(lam, eta)``
    with the leg price equal to ``exp(lam @ V_T + eta)`` on the event.
    """

    key: EventKey
    constraints: LinearConstraints
    legs: dict
    empty: bool = False

    @property
    def payoff_role(self) -> tuple[str, ...]:
        return tuple(self.legs)

    def leg(self, market: str) -> tuple[np.ndarray, float]:
        if self.key.regime.coupled:
            return self.legs["common"]
        return self.legs[market]

    def leg_role(self, market: str) -> str:
        return "common" if self.key.regime.coupled else market


@dataclass
class PriceDecomposition:
    """Total value with its per-event breakdown.

    ``quadrature_error`` combines per-term statistical errors in quadrature
    and adds the bounds of pruned terms linearly.
    """

    total: float
    per_event: list = field(default_factory=list)
    quadrature_error: float = 0.0
    pruned_bound: float = 0.0

    def __float__(self):
        return float(self.total)


# ---------------------------------------------------------------- enumeration

def _zone_permutations(market: MarketSpec) -> list[tuple[int, ...]]:
    """Orders a zone can realise; technologies sharing a fuel keep index order."""
    fuels = market.fuel_ids
    out = []
    for perm in itertools.permutations(range(market.n_tech)):
        pos = {tech: i for i, tech in enumerate(perm)}
        ok = all(pos[i] < pos[j] for i in range(len(fuels)) for j in range(i + 1, len(fuels))
                 if fuels[i] == fuels[j])
        if ok:
            out.append(perm)
    return out


def _chain_edges(market: MarketSpec, perm) -> set[tuple[int, int]]:
    f = [market.fuel_ids[i] for i in perm]
    return {(f[i], f[i + 1]) for i in range(len(f) - 1) if f[i] != f[i + 1]}


def _acyclic(n: int, edges) -> bool:
    succ = {i: set() for i in range(n)}
    indeg = [0] * n
    for u, v in edges:
        if v not in succ[u]:
            succ[u].add(v)
            indeg[v] += 1
    stack = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    return seen == n


def merit_order_pairs(scenario: ScenarioSpec) -> list[MeritOrder]:
    """Distinct zone order pairs that some fuel ordering can produce."""
    out = []
    for pa in _zone_permutations(scenario.market_a):
        ea = _chain_edges(scenario.market_a, pa)
        for pb in _zone_permutations(scenario.market_b):
            if _acyclic(scenario.n_fuels, ea | _chain_edges(scenario.market_b, pb)):
                out.append(MeritOrder(pa, pb))
    return out


def _induced(market: MarketSpec, position) -> tuple[int, ...]:
    return tuple(sorted(range(market.n_tech), key=lambda i: (position[market.fuel_ids[i]], i)))


def enumerate_events(scenario: ScenarioSpec, mode: str | None = None) -> list[EventKey]:
    """All ``(order, k, l, regime)`` cells, in lexicographic order.

    ``mode="zonal"`` walks distinct zone order pairs; ``mode="global"`` walks
    every fuel ordering (``N!`` of them) and records it on the key.
    """
    mode = scenario.numerics.merit_orders if mode is None else mode
    if scenario.n_fuels > scenario.numerics.max_fuels:
        raise EnumerationError(
            f"{scenario.n_fuels} fuels exceed the enumeration cap of {scenario.numerics.max_fuels}")
    na, nb = scenario.market_a.n_tech, scenario.market_b.n_tech
    cells = [(k, l, r) for k in range(na) for l in range(nb) for r in Regime]
    keys = []
    if mode == "zonal":
        for order in merit_order_pairs(scenario):
            keys.extend(EventKey(order, k, l, r) for k, l, r in cells)
    elif mode == "global":
        for sigma in itertools.permutations(range(scenario.n_fuels)):
            position = {f: i for i, f in enumerate(sigma)}
            order = MeritOrder(_induced(scenario.market_a, position), _induced(scenario.market_b, position))
            keys.extend(EventKey(order, k, l, r, sigma) for k, l, r in cells)
    else:
        raise ValueError(f"unknown merit order mode {mode!r}")
    return keys


# ---------------------------------------------------------------- event terms

class _Zone:
    def __init__(self, market: MarketSpec, perm, T: float, extrapolate: bool):
        caps = capacities(market, T)[list(perm)]
        if np.any(caps < 0):
            raise ValueError("negative capacity at maturity")
        self.cum = np.concatenate([[0.0], np.cumsum(caps)])
        self.fuel = [market.fuel_ids[i] for i in perm]
        self.n = market.n_tech
        self.alpha = market.alpha
        self.beta = market.beta
        self.c_bar = float(self.cum[-1])
        self.extrapolate = extrapolate

    def lower(self, k: int) -> float:
        return -math.inf if (k == 0 and self.extrapolate) else float(self.cum[k])

    def upper(self, k: int) -> float:
        return math.inf if (k == self.n - 1 and self.extrapolate) else float(self.cum[k + 1])

    def nonempty(self, k: int) -> bool:
        return self.lower(k) < self.upper(k)

    def previous(self, k: int) -> int | None:
        for j in range(k - 1, -1, -1):
            if self.nonempty(j):
                return j
        return None


class _Rows:
    def __init__(self, m: int):
        self.m = m
        self.rows, self.lo, self.hi, self.olo, self.ohi = [], [], [], [], []

    def add(self, row, lo=-math.inf, hi=math.inf, open_lo=False, open_hi=False):
        self.rows.append(np.asarray(row, dtype=float))
        self.lo.append(lo)
        self.hi.append(hi)
        self.olo.append(open_lo)
        self.ohi.append(open_hi)

    def build(self) -> LinearConstraints:
        M = np.array(self.rows) if self.rows else np.zeros((0, self.m))
        return LinearConstraints(self.lo, self.hi, M, self.olo, self.ohi)


def _vec(m: int, *pairs) -> np.ndarray:
    v = np.zeros(m)
    for idx, val in pairs:
        v[idx] += val
    return v


def _zone_chain(rows: _Rows, zone: _Zone, perm, skip: int | None = None):
    """x_{rank i} <= x_{rank i+1}; ``skip`` drops the row ending at that rank."""
    for i in range(zone.n - 1):
        if skip is not None and i + 1 == skip:
            continue
        f, g = zone.fuel[i], zone.fuel[i + 1]
        if f == g:
            continue
        # a tie goes to the lower base index, so the reverse pair needs strictness
        rows.add(_vec(rows.m, (f, 1.0), (g, -1.0)), hi=0.0, open_hi=perm[i] > perm[i + 1])


def event_term(key: EventKey, scenario: ScenarioSpec, T: float | None = None,
               extrapolate: bool = True) -> EventTerm:
    """Tilts and linear constraints encoding the event ``key`` at maturity ``T``.

    With ``extrapolate=False`` the first and last marginality intervals stop
    at 0 and the total capacity instead of running to infinity.
    """
    T = scenario.maturity if T is None else T
    N = scenario.n_fuels
    m = N + 2
    iA, iB = N, N + 1
    za = _Zone(scenario.market_a, key.order.perm_a, T, extrapolate)
    zb = _Zone(scenario.market_b, key.order.perm_b, T, extrapolate)
    if not (0 <= key.k < za.n and 0 <= key.l < zb.n):
        raise ValueError(f"ranks out of range in {key.label()}")
    lo_flow, hi_flow = scenario.coupling.flow_min, scenario.coupling.flow_max
    aA, bA, aB, bB = za.alpha, za.beta, zb.alpha, zb.beta
    k, l = key.k, key.l
    xk, yl = za.fuel[k], zb.fuel[l]
    rows = _Rows(m)
    legs: dict = {}
    empty = False
    skip_a = skip_b = None
    regime = key.regime

    if regime in (Regime.SATURATED_A_TO_B, Regime.SATURATED_B_TO_A):
        e = hi_flow if regime is Regime.SATURATED_A_TO_B else lo_flow
        empty = not (za.nonempty(k) and zb.nonempty(l))
        rows.add(_vec(m, (iA, 1.0)), za.lower(k) - e, za.upper(k) - e, open_hi=True)
        rows.add(_vec(m, (iB, 1.0)), zb.lower(l) + e, zb.upper(l) + e, open_hi=True)
        price_row = _vec(m, (xk, 1.0), (yl, -1.0), (iA, -bA), (iB, bB))
        c = aB - aA + bB * (zb.c_bar + e) - bA * (za.c_bar - e)
        if regime is Regime.SATURATED_A_TO_B:
            rows.add(price_row, hi=c)
        else:
            # ties on a zero-width interconnection belong to the saturated A->B cell
            rows.add(price_row, lo=c, open_lo=lo_flow == hi_flow)
        legs["A"] = (_vec(m, (xk, 1.0), (iA, -bA)), aA + bA * (za.c_bar - e))
        legs["B"] = (_vec(m, (yl, 1.0), (iB, -bB)), aB + bB * (zb.c_bar + e))

    elif regime is Regime.COUPLED_DISC_A:
        p = za.previous(k) if k > 0 else None
        if p is None or not za.nonempty(k) or not zb.nonempty(l):
            empty = True
            p = k
        brk = float(za.cum[k])
        xp = za.fuel[p]
        rows.add(_vec(m, (iA, 1.0)), brk - hi_flow, brk - lo_flow, open_lo=True, open_hi=True)
        rows.add(_vec(m, (iA, 1.0), (iB, 1.0)), zb.lower(l) + brk, zb.upper(l) + brk, open_hi=True)
        c = aB - aA + bB * (zb.c_bar + brk) - bA * (za.c_bar - brk)
        rows.add(_vec(m, (xp, 1.0), (yl, -1.0), (iA, bB), (iB, bB)), hi=c)
        rows.add(_vec(m, (xk, 1.0), (yl, -1.0), (iA, bB), (iB, bB)), lo=c)
        legs["common"] = (_vec(m, (yl, 1.0), (iA, -bB), (iB, -bB)), aB + bB * (zb.c_bar + brk))
        if p == k - 1:
            skip_a = k

    elif regime is Regime.COUPLED_DISC_B:
        p = zb.previous(l) if l > 0 else None
        if p is None or not zb.nonempty(l) or not za.nonempty(k):
            empty = True
            p = l
        brk = float(zb.cum[l])
        yp = zb.fuel[p]
        rows.add(_vec(m, (iB, 1.0)), brk + lo_flow, brk + hi_flow, open_lo=True, open_hi=True)
        rows.add(_vec(m, (iA, 1.0), (iB, 1.0)), za.lower(k) + brk, za.upper(k) + brk, open_hi=True)
        c = aA - aB + bA * (za.c_bar + brk) - bB * (zb.c_bar - brk)
        rows.add(_vec(m, (yp, 1.0), (xk, -1.0), (iA, bA), (iB, bA)), hi=c)
        rows.add(_vec(m, (yl, 1.0), (xk, -1.0), (iA, bA), (iB, bA)), lo=c)
        legs["common"] = (_vec(m, (xk, 1.0), (iA, -bA), (iB, -bA)), aA + bA * (za.c_bar + brk))
        if p == l - 1:
            skip_b = l

    else:
        bs = bA + bB
        K = aA - aB + bA * za.c_bar - bB * zb.c_bar
        empty = not (za.nonempty(k) and zb.nonempty(l))
        # bs < 0 flips every bound
        rows.add(_vec(m, (xk, 1.0), (yl, -1.0), (iA, -bA), (iB, bB)),
                 bs * hi_flow - K, bs * lo_flow - K, open_lo=True, open_hi=True)
        rows.add(_vec(m, (xk, 1.0), (yl, -1.0), (iA, bB), (iB, bB)),
                 bs * za.upper(k) - K, bs * za.lower(k) - K, open_lo=True, open_hi=True)
        rows.add(_vec(m, (yl, 1.0), (xk, -1.0), (iA, bA), (iB, bA)),
                 bs * zb.upper(l) + K, bs * zb.lower(l) + K, open_lo=True, open_hi=True)
        lam = _vec(m, (xk, bB / bs), (yl, bA / bs), (iA, -bA * bB / bs), (iB, -bA * bB / bs))
        eta = (bB * aA + bA * aB + bA * bB * (za.c_bar + zb.c_bar)) / bs
        legs["common"] = (lam, eta)

    if key.global_order is None:
        _zone_chain(rows, za, key.order.perm_a, skip_a)
        _zone_chain(rows, zb, key.order.perm_b, skip_b)
    else:
        sigma = key.global_order
        for i in range(N - 1):
            rows.add(_vec(m, (sigma[i], 1.0), (sigma[i + 1], -1.0)), hi=0.0,
                     open_hi=sigma[i] > sigma[i + 1])

    constraints = rows.build()
    if np.any(constraints.lower >= constraints.upper):
        empty = True
    return EventTerm(key, constraints, legs, empty)


def event_indicators(terms, states) -> np.ndarray:
    """``(n, len(terms))`` membership of each state row in each event's system."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = np.zeros((states.shape[0], len(terms)), dtype=bool)
    for j, term in enumerate(terms):
        if term.empty:
            continue
        c = term.constraints
        out[:, j] = np.all(c.satisfied(states @ c.matrix.T), axis=1)
    return out


# ------------------------------------------------- published systems

def published_constraints(key: EventKey, scenario: ScenarioSpec, T: float | None = None) -> LinearConstraints:
    """Literal transcription of the published constraint matrices.

    Available for the saturated cells and the interior coupled cell of a
    global ordering. The saturated B->A system takes the lower flow bound and
    the interior system's flow row takes the lower bound on its upper side.
    Intervals stop at 0 and the total capacity.
    """
    if key.global_order is None:
        raise ValueError("published systems use a global fuel ordering")
    T = scenario.maturity if T is None else T
    N = scenario.n_fuels
    m = N + 2
    za = _Zone(scenario.market_a, key.order.perm_a, T, False)
    zb = _Zone(scenario.market_b, key.order.perm_b, T, False)
    aA, bA, aB, bB = za.alpha, za.beta, zb.alpha, zb.beta
    Ek = np.zeros(N)
    Ek[za.fuel[key.k]] = 1.0
    El = np.zeros(N)
    El[zb.fuel[key.l]] = 1.0
    sA_lo, sA_hi = za.cum[key.k], za.cum[key.k + 1]
    sB_lo, sB_hi = zb.cum[key.l], zb.cum[key.l + 1]

    # differencing block: rows x_{s(i+1)} - x_{s(i)} >= 0 in ordered coordinates
    sigma = key.global_order
    D = np.zeros((N - 1, m))
    for i in range(N - 1):
        D[i, sigma[i]] = -1.0
        D[i, sigma[i + 1]] = 1.0
    d_lo = np.zeros(N - 1)
    d_hi = np.full(N - 1, math.inf)

    if key.regime in (Regime.SATURATED_A_TO_B, Regime.SATURATED_B_TO_A):
        E = scenario.coupling.flow_max if key.regime is Regime.SATURATED_A_TO_B else scenario.coupling.flow_min
        head = np.array([
            np.concatenate([np.zeros(N), [1.0, 0.0]]),
            np.concatenate([np.zeros(N), [0.0, 1.0]]),
            np.concatenate([Ek - El, [-bA, bB]]),
        ])
        c = aB - aA + bB * (zb.c_bar + E) - bA * (za.c_bar - E)
        if key.regime is Regime.SATURATED_A_TO_B:
            a = [sA_lo - E, sB_lo + E, -math.inf]
            b = [sA_hi - E, sB_hi + E, c]
        else:
            a = [sA_lo - E, sB_lo + E, c]
            b = [sA_hi - E, sB_hi + E, math.inf]
    elif key.regime is Regime.COUPLED_INTERIOR:
        bs = bA + bB
        K = aA - aB + bA * za.c_bar - bB * zb.c_bar
        head = np.array([
            np.concatenate([Ek - El, [-bA, bB]]),
            np.concatenate([Ek - El, [bB, bB]]),
            np.concatenate([El - Ek, [bA, bA]]),
        ])
        a = [bs * scenario.coupling.flow_max - K, bs * sA_lo - K, bs * sB_lo + K]
        b = [bs * scenario.coupling.flow_min - K, bs * sA_hi - K, bs * sB_hi + K]
    else:
        raise ValueError("no consistent published system for this regime")
    return LinearConstraints(np.concatenate([a, d_lo]), np.concatenate([b, d_hi]), np.vstack([head, D]))


def _canonical_rows(c: LinearConstraints, tol: float) -> list[tuple]:
    out = []
    for row, a, b in zip(c.matrix, c.lower, c.upper):
        lo, hi = min(a, b), max(a, b)
        nz = np.flatnonzero(np.abs(row) > tol)
        if nz.size and row[nz[0]] < 0:
            row, lo, hi = -row, -hi, -lo
        out.append((row, lo, hi))
    return out


def same_constraint_system(c1: LinearConstraints, c2: LinearConstraints, tol: float = 1e-9) -> bool:
    """Equal up to row order, sign-flipped ``(row, a, b)`` triples and bound order."""
    r1 = _canonical_rows(c1, tol)
    r2 = _canonical_rows(c2, tol)
    if len(r1) != len(r2):
        return False

    def close(x, y):
        if math.isinf(x) or math.isinf(y):
            return x == y
        return abs(x - y) <= tol * max(1.0, abs(x), abs(y))

    unused = list(range(len(r2)))
    for row, lo, hi in r1:
        for j in unused:
            row2, lo2, hi2 = r2[j]
            if np.allclose(row, row2, rtol=tol, atol=tol) and close(lo, lo2) and close(hi, hi2):
                unused.remove(j)
                break
        else:
            return False
    return True


# ------------------------------------------------------------------- engine

@dataclass(frozen=True)
class _Estimate:
    value: float
    error: float
    bound: float = 0.0


_ZERO = _Estimate(0.0, 0.0, 0.0)


class PricingEngine:
    """Evaluates and caches the event table for one scenario and horizon.

    Parameters
    ----------
    scenario : ScenarioSpec
    t, T : float, optional
        Valuation time and maturity; default to the scenario's.
    state : StateVector, optional
        State at ``t``; defaults to the scenario's initial values.
    mode : str, optional
        ``"zonal"`` or ``"global"`` merit order enumeration.
    """

    def __init__(self, scenario: ScenarioSpec, t: float | None = None, T: float | None = None,
                 state: StateVector | None = None, mode: str | None = None):
        self.scenario = scenario
        self.t = scenario.valuation_time if t is None else t
        self.T = scenario.maturity if T is None else T
        if self.T < self.t:
            raise ValueError("maturity must not precede valuation time")
        self.state = initial_state(scenario, self.t) if state is None else state
        self.law = conditional_law(self.state, self.t, self.T, scenario)
        self.numerics = scenario.numerics
        self.deterministic = self.law.is_degenerate()
        self._terms: list[EventTerm] | None = None
        self._cache: dict = {}
        self.mode = scenario.numerics.merit_orders if mode is None else mode

    @property
    def terms(self) -> list[EventTerm]:
        if self._terms is None:
            keys = enumerate_events(self.scenario, self.mode)
            self._terms = [event_term(key, self.scenario, self.T) for key in keys]
        return self._terms

    def mean_outcome(self):
        return spot_prices(StateVector.from_vector(self.law.mean, self.T), self.scenario, self.T)

    def _seed(self, idx: int, tag: int):
        return np.random.SeedSequence([self.numerics.seed, idx, tag])

    def _box(self, law: GaussianLaw, constraints: LinearConstraints, factor: float, seed) -> _Estimate:
        proj = project(law, constraints)
        if proj.infeasible:
            return _ZERO
        sd = np.sqrt(np.diag(proj.law.covariance))
        if sd.size:
            marg = ndtr((proj.upper - proj.law.mean) / sd) - ndtr((proj.lower - proj.law.mean) / sd)
            bound = factor * float(marg.min())
        else:
            bound = factor
        if bound <= PRUNE_FRACTION * self.numerics.quadrature_tolerance * max(1.0, factor):
            return _Estimate(0.0, 0.0, bound)
        est = rectangle_probability(proj.law, proj.lower, proj.upper,
                                    tol=self.numerics.quadrature_tolerance,
                                    shifts=self.numerics.qmc_shifts,
                                    max_points=self.numerics.qmc_max_points, seed=seed)
        return _Estimate(factor * est.value, factor * est.error)

    def probability(self, idx: int) -> _Estimate:
        key = ("p", idx)
        if key not in self._cache:
            term = self.terms[idx]
            self._cache[key] = _ZERO if term.empty else self._box(
                self.law, term.constraints, 1.0, self._seed(idx, _TAG_PROB))
        return self._cache[key]

    def leg(self, idx: int, role: str) -> _Estimate:
        key = ("leg", idx, role)
        if key not in self._cache:
            term = self.terms[idx]
            if term.empty:
                self._cache[key] = _ZERO
            else:
                lam, eta = term.legs[role]
                factor, tilted = exponential_tilt(self.law, lam, eta)
                self._cache[key] = self._box(tilted, term.constraints, factor, self._seed(idx, _TAG_LEG[role]))
        return self._cache[key]

    def _assemble(self, parts) -> PriceDecomposition:
        """``parts``: iterable of (idx, [(sign, estimate), ...])."""
        total = 0.0
        var = 0.0
        bound = 0.0
        per_event = []
        for idx, pieces in parts:
            contrib = 0.0
            for sign, est in pieces:
                contrib += sign * est.value
                var += est.error ** 2
                bound += est.bound
            total += contrib
            per_event.append((self.terms[idx].key, contrib, self.probability(idx).value))
        return PriceDecomposition(total, per_event, math.sqrt(var) + bound, bound)

    def _deterministic(self, value: float) -> PriceDecomposition:
        out = self.mean_outcome()
        return PriceDecomposition(value, [(out.key, value, 1.0)], 0.0, 0.0)

    # -- pricers

    def forward_price(self, market: str) -> PriceDecomposition:
        _check_market(market)
        if self.deterministic:
            out = self.mean_outcome()
            return self._deterministic(out.price_a if market == "A" else out.price_b)
        parts = []
        for idx, term in enumerate(self.terms):
            parts.append((idx, [(1.0, self.leg(idx, term.leg_role(market)))]))
        return self._assemble(parts)

    def transmission_right_value(self, direction: str = "both") -> PriceDecomposition:
        """Spread option on the two spot prices.

        ``direction``: ``"both"`` pays ``|P_A - P_B|``; ``"A_to_B"`` pays
        ``(P_B - P_A)^+``; ``"B_to_A"`` pays ``(P_A - P_B)^+``.
        """
        if direction not in ("both", "A_to_B", "B_to_A"):
            raise ValueError(f"unknown direction {direction!r}")
        if self.deterministic:
            out = self.mean_outcome()
            spread = out.price_b - out.price_a
            value = {"both": abs(spread), "A_to_B": max(spread, 0.0), "B_to_A": max(-spread, 0.0)}[direction]
            return self._deterministic(value)
        parts = []
        for idx, term in enumerate(self.terms):
            r = term.key.regime
            if r is Regime.SATURATED_A_TO_B and direction in ("both", "A_to_B"):
                parts.append((idx, [(1.0, self.leg(idx, "B")), (-1.0, self.leg(idx, "A"))]))
            elif r is Regime.SATURATED_B_TO_A and direction in ("both", "B_to_A"):
                parts.append((idx, [(1.0, self.leg(idx, "A")), (-1.0, self.leg(idx, "B"))]))
        return self._assemble(parts)

    def call_value(self, market: str, strike: float) -> PriceDecomposition:
        _check_market(market)
        if not strike >= 0:
            raise ValueError("strike must be >= 0")
        if self.deterministic:
            out = self.mean_outcome()
            price = out.price_a if market == "A" else out.price_b
            return self._deterministic(max(price - strike, 0.0))
        if strike == 0.0:
            return self.forward_price(market)
        log_k = math.log(strike)
        parts = []
        for idx, term in enumerate(self.terms):
            if term.empty:
                parts.append((idx, []))
                continue
            role = term.leg_role(market)
            lam, eta = term.legs[role]
            aug = term.constraints.append(lam, log_k - eta, math.inf)
            factor, tilted = exponential_tilt(self.law, lam, eta)
            tag = _TAG_LEG[role]
            upper = self._box(tilted, aug, factor, self._seed(idx, _TAG_CALL + tag))
            prob = self._box(self.law, aug, 1.0, self._seed(idx, _TAG_CALL_PROB + tag))
            parts.append((idx, [(1.0, upper), (-strike, prob)]))
        return self._assemble(parts)

    def coupling_rate(self) -> PriceDecomposition:
        """Probability that the two spot prices coincide."""
        if self.deterministic:
            return self._deterministic(1.0 if self.mean_outcome().regime.coupled else 0.0)
        parts = [(idx, [(1.0, self.probability(idx))])
                 for idx, term in enumerate(self.terms) if term.key.regime.coupled]
        return self._assemble(parts)

    def total_probability(self) -> PriceDecomposition:
        """Sum of all untilted event probabilities; 1 for a complete partition."""
        if self.deterministic:
            return self._deterministic(1.0)
        return self._assemble([(idx, [(1.0, self.probability(idx))]) for idx in range(len(self.terms))])


def _check_market(market: str):
    if market not in ("A", "B"):
        raise ValueError(f"unknown market {market!r}")


# ------------------------------------------------------- functional wrappers

def forward_price(market: str, scenario: ScenarioSpec, t: float | None = None, T: float | None = None,
                  state: StateVector | None = None) -> PriceDecomposition:
    return PricingEngine(scenario, t, T, state).forward_price(market)


def transmission_right_value(scenario: ScenarioSpec, t: float | None = None, T: float | None = None,
                             state: StateVector | None = None, direction: str = "both") -> PriceDecomposition:
    return PricingEngine(scenario, t, T, state).transmission_right_value(direction)


def call_value(market: str, strike: float, scenario: ScenarioSpec, t: float | None = None,
               T: float | None = None, state: StateVector | None = None) -> PriceDecomposition:
    return PricingEngine(scenario, t, T, state).call_value(market, strike)


def coupling_rate(scenario: ScenarioSpec, t: float | None = None, T: float | None = None,
                  state: StateVector | None = None) -> PriceDecomposition:
    return PricingEngine(scenario, t, T, state).coupling_rate()


def fuel_order_probability(scenario: ScenarioSpec, fuel_order, t: float | None = None,
                           T: float | None = None, state: StateVector | None = None) -> float:
    """Probability that terminal fuel costs are ranked as ``fuel_order`` (cheapest first)."""
    t = scenario.valuation_time if t is None else t
    T = scenario.maturity if T is None else T
    state = initial_state(scenario, t) if state is None else state
    law = conditional_law(state, t, T, scenario)
    m = scenario.dim
    rows = np.zeros((len(fuel_order) - 1, m))
    for i in range(len(fuel_order) - 1):
        rows[i, fuel_order[i]] = 1.0
        rows[i, fuel_order[i + 1]] = -1.0
    c = LinearConstraints(np.full(len(rows), -math.inf), np.zeros(len(rows)), rows)
    proj = project(law, c)
    if proj.infeasible:
        return 0.0
    est = rectangle_probability(proj.law, proj.lower, proj.upper,
                                tol=scenario.numerics.quadrature_tolerance * 0.1,
                                shifts=scenario.numerics.qmc_shifts,
                                max_points=scenario.numerics.qmc_max_points,
                                seed=np.random.SeedSequence([scenario.numerics.seed, 7]))
    return est.value


# ------------------------------------------------------------------ Margrabe

def exchange_option(f_long: float, f_short: float, sigma: float, tau: float) -> float:
    """Value of ``(F_long - F_short)^+`` for jointly lognormal forwards, undiscounted."""
    if f_long <= 0 or f_short <= 0:
        raise ValueError("forwards must be positive")
    if sigma < 0 or tau < 0:
        raise ValueError("sigma and tau must be >= 0")
    s = sigma * math.sqrt(tau)
    if s == 0.0:
        return max(f_long - f_short, 0.0)
    d1 = (math.log(f_long / f_short) + 0.5 * s * s) / s
    return float(f_long * ndtr(d1) - f_short * ndtr(d1 - s))


def margrabe_value(moments, t: float, T: float) -> float:
    """Both directional exchange options under lognormal spot dynamics.

    ``moments`` needs ``vol_a``, ``vol_b``, ``correlation``, ``mean_a``,
    ``mean_b`` (see :func:`coupledpower.montecarlo.spot_log_moments`).
    """
    if moments.vol_a < 0 or moments.vol_b < 0:
        raise ValueError("volatilities must be >= 0")
    if T < t:
        raise ValueError("maturity must not precede valuation time")
    var = moments.vol_a ** 2 + moments.vol_b ** 2 - 2.0 * moments.correlation * moments.vol_a * moments.vol_b
    sigma = math.sqrt(max(var, 0.0))
    tau = T - t
    return (exchange_option(moments.mean_b, moments.mean_a, sigma, tau)
            + exchange_option(moments.mean_a, moments.mean_b, sigma, tau))
