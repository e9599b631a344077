"""JSON scenario files: loading, unit normalisation, validation, serialisation.

Files carry a ``units`` block. Power may be ``MW`` or ``GW`` and beta
``per_MW`` or ``per_GW``; everything is converted to MW on load. Demand
and fuel volatilities may be given directly or as terminal moments over the
scenario horizon (``terminal_variance`` in power units squared,
``terminal_log_std`` for fuels).
"""

from __future__ import annotations

import json
import math
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .model import (
    CouplingSpec,
    FuelSpec,
    MarketSpec,
    Numerics,
    ScenarioSpec,
    TechnologySpec,
    capacity_at,
)

_POWER = {"MW": 1.0, "GW": 1000.0}
_BETA = {"per_MW": 1.0, "per_GW": 1e-3}


class ParseError(Exception):
    """Unreadable file or malformed JSON."""


class ScenarioError(ValueError):
    """Semantically invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NumericsError(RuntimeError):
    pass


def terminal_std_to_vol(std: float, speed: float, tau: float) -> float:
    """OU volatility whose terminal standard deviation over ``tau`` is ``std``."""
    if tau <= 0:
        raise ValueError("terminal moments need a positive horizon")
    return std * math.sqrt(2.0 * speed / -math.expm1(-2.0 * speed * tau))


def _get(d: dict, key: str, path: str, default=None, required: bool = True):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    if key in d:
        return d[key]
    if required and default is None:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing field")
    return default


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    return float(value)


def _wrap(path: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(path, str(exc)) from None


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ScenarioError("", "top level must be an object")
    units = doc.get("units", {})
    power_unit = units.get("power", "MW")
    beta_unit = units.get("beta", "per_MW")
    if power_unit not in _POWER:
        raise ScenarioError("units.power", f"unknown unit {power_unit!r}")
    if beta_unit not in _BETA:
        raise ScenarioError("units.beta", f"unknown unit {beta_unit!r}")
    pw = _POWER[power_unit]
    bw = _BETA[beta_unit]

    t = _num(doc.get("valuation_time", 0.0), "valuation_time")
    T = _num(doc.get("maturity", 1.0), "maturity")
    if T < t:
        raise ScenarioError("maturity", "must not precede valuation_time")
    tau = T - t

    fuel_docs = _get(doc, "fuels", "")
    if not isinstance(fuel_docs, list) or not fuel_docs:
        raise ScenarioError("fuels", "expected a non-empty list")
    fuels = []
    names = {}
    for i, fd in enumerate(fuel_docs):
        p = f"fuels[{i}]"
        name = str(_get(fd, "name", p, default=f"fuel{i}", required=False))
        if name in names:
            raise ScenarioError(f"{p}.name", f"duplicate fuel name {name!r}")
        names[name] = i
        speed = _num(_get(fd, "mean_reversion", p), f"{p}.mean_reversion")
        if "initial_log_cost" in fd:
            x0 = _num(fd["initial_log_cost"], f"{p}.initial_log_cost")
        else:
            c0 = _num(_get(fd, "initial_cost", p), f"{p}.initial_cost")
            if c0 <= 0:
                raise ScenarioError(f"{p}.initial_cost", "must be > 0")
            x0 = math.log(c0)
        m = _num(fd["long_run_log_mean"], f"{p}.long_run_log_mean") if "long_run_log_mean" in fd else x0
        if "volatility" in fd:
            vol = _num(fd["volatility"], f"{p}.volatility")
        else:
            std = _num(_get(fd, "terminal_log_std", p), f"{p}.terminal_log_std")
            if speed <= 0:
                raise ScenarioError(f"{p}.mean_reversion", "must be > 0")
            vol = _wrap(f"{p}.terminal_log_std", terminal_std_to_vol, std, speed, tau)
        fuels.append(_wrap(p, FuelSpec, name, x0, speed, m, vol))

    def fuel_ref(ref, path):
        if isinstance(ref, str):
            if ref not in names:
                raise ScenarioError(path, f"unknown fuel {ref!r}")
            return names[ref]
        if isinstance(ref, bool) or not isinstance(ref, int):
            raise ScenarioError(path, f"expected a fuel name or index, got {ref!r}")
        if not 0 <= ref < len(fuels):
            raise ScenarioError(path, f"fuel index {ref} out of range")
        return ref

    markets_doc = _get(doc, "markets", "")
    markets = {}
    for zone in ("A", "B"):
        p = f"markets.{zone}"
        md = _get(markets_doc, zone, "markets")
        techs = []
        tech_docs = _get(md, "technologies", p)
        if not isinstance(tech_docs, list) or not tech_docs:
            raise ScenarioError(f"{p}.technologies", "expected a non-empty list")
        for j, td in enumerate(tech_docs):
            tp = f"{p}.technologies[{j}]"
            techs.append(TechnologySpec(
                fuel_ref(_get(td, "fuel", tp), f"{tp}.fuel"),
                _num(td.get("capacity", 0.0), f"{tp}.capacity") * pw,
                _num(td.get("capacity_cos", 0.0), f"{tp}.capacity_cos") * pw,
                _num(td.get("capacity_sin", 0.0), f"{tp}.capacity_sin") * pw,
                str(td.get("name", "")),
            ))
        dd = _get(md, "demand", p)
        dp = f"{p}.demand"
        speed = _num(_get(dd, "mean_reversion", dp), f"{dp}.mean_reversion")
        if "vol" in dd:
            dvol = _num(dd["vol"], f"{dp}.vol") * pw
        else:
            var = _num(_get(dd, "terminal_variance", dp), f"{dp}.terminal_variance")
            if var < 0:
                raise ScenarioError(f"{dp}.terminal_variance", "must be >= 0")
            if speed <= 0:
                raise ScenarioError(f"{dp}.mean_reversion", "must be > 0")
            dvol = _wrap(f"{dp}.terminal_variance", terminal_std_to_vol, math.sqrt(var) * pw, speed, tau)
        alpha = _num(_get(md, "alpha", p), f"{p}.alpha")
        beta = _num(_get(md, "beta", p), f"{p}.beta") * bw
        market = _wrap(p, MarketSpec, tuple(techs), alpha, beta,
                       _num(dd.get("const", 0.0), f"{dp}.const") * pw,
                       _num(dd.get("cos", 0.0), f"{dp}.cos") * pw,
                       _num(dd.get("sin", 0.0), f"{dp}.sin") * pw,
                       speed, dvol,
                       _num(dd.get("initial_dev", 0.0), f"{dp}.initial_dev") * pw,
                       str(md.get("name", zone)))
        for tj in range(market.n_tech):
            for s in np.linspace(t, T, 101):
                if capacity_at(market, tj, float(s)) < 0:
                    raise ScenarioError(f"{p}.technologies[{tj}]", f"capacity negative at t={s:.4g}")
        markets[zone] = market

    cd = _get(doc, "coupling", "")
    coupling = _wrap("coupling", CouplingSpec,
                     _num(_get(cd, "flow_min", "coupling"), "coupling.flow_min") * pw,
                     _num(_get(cd, "flow_max", "coupling"), "coupling.flow_max") * pw)

    dim = len(fuels) + 2
    corr_doc = doc.get("correlation", "identity")
    if corr_doc == "identity":
        corr = np.eye(dim)
    else:
        try:
            corr = np.array(corr_doc, dtype=float)
        except (TypeError, ValueError):
            raise ScenarioError("correlation", "expected a numeric matrix or 'identity'") from None
        if corr.shape != (dim, dim):
            raise ScenarioError("correlation", f"expected a {dim}x{dim} matrix, got shape {corr.shape}")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ScenarioError("correlation", "matrix is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ScenarioError("correlation", "matrix diagonal must be 1")
        if np.linalg.eigvalsh(corr).min() < -1e-10 * dim:
            raise ScenarioError("correlation", "matrix is not positive semidefinite")

    nd = doc.get("numerics", {})
    known = set(Numerics.__dataclass_fields__)
    extra = set(nd) - known
    if extra:
        raise ScenarioError("numerics", f"unknown keys {sorted(extra)}")
    numerics = _wrap("numerics", Numerics, **nd)

    if markets["A"].beta == 0.0 and markets["B"].beta == 0.0:
        raise ScenarioError("markets", "beta_A and beta_B cannot both be zero")
    if len(fuels) > numerics.max_fuels:
        raise ScenarioError("fuels", f"{len(fuels)} fuels exceed the enumeration cap {numerics.max_fuels}")
    return _wrap("", ScenarioSpec, tuple(fuels), markets["A"], markets["B"], coupling,
                 tuple(tuple(float(v) for v in row) for row in corr), t, T, numerics)


def load_scenario(path) -> ScenarioSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(doc)


def scenario_to_dict(s: ScenarioSpec) -> dict:
    """MW-unit document that loads back to an identical ScenarioSpec."""
    def market(m: MarketSpec):
        return {
            "name": m.name,
            "alpha": m.alpha,
            "beta": m.beta,
            "technologies": [
                {"name": tc.name, "fuel": tc.fuel, "capacity": tc.capacity_const,
                 "capacity_cos": tc.capacity_cos, "capacity_sin": tc.capacity_sin}
                for tc in m.technologies
            ],
            "demand": {"const": m.demand_const, "cos": m.demand_cos, "sin": m.demand_sin,
                       "mean_reversion": m.demand_mean_reversion, "vol": m.demand_vol,
                       "initial_dev": m.initial_demand_dev},
        }

    return {
        "units": {"power": "MW", "beta": "per_MW"},
        "valuation_time": s.valuation_time,
        "maturity": s.maturity,
        "fuels": [{"name": f.name, "initial_log_cost": f.initial_log_cost, "mean_reversion": f.mean_reversion,
                   "long_run_log_mean": f.long_run_log_mean, "volatility": f.volatility} for f in s.fuels],
        "markets": {"A": market(s.market_a), "B": market(s.market_b)},
        "coupling": {"flow_min": s.coupling.flow_min, "flow_max": s.coupling.flow_max},
        "correlation": [list(row) for row in s.correlation],
        "numerics": dict(s.numerics.__dict__),
    }


def dump_scenario(s: ScenarioSpec, path=None) -> str:
    text = json.dumps(scenario_to_dict(s), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def bundled_path(name: str = "table1") -> Path:
    return Path(str(resources.files("coupledpower") / "data" / f"{name}.json"))


def bundled_scenario(name: str = "table1") -> ScenarioSpec:
    return load_scenario(bundled_path(name))


# the four demand-variance / fuel-vol cases of the two-market example
VARIANTS = {
    "table1_lowdem_lowfuel": (0.5, 0.01),
    "table1_highdem_lowfuel": (5.0, 0.01),
    "table1_lowdem_highfuel": (0.5, 0.10),
    "table1_highdem_highfuel": (5.0, 0.10),
}


def with_flow_bound(s: ScenarioSpec, flow_max: float, flow_min: float | None = None) -> ScenarioSpec:
    """Copy with interconnection bounds ``[flow_min, flow_max]`` (default symmetric)."""
    lo = -flow_max if flow_min is None else flow_min
    return replace(s, coupling=CouplingSpec(lo, flow_max))


def set_param(s: ScenarioSpec, path: str, value: float) -> ScenarioSpec:
    """Copy with one dotted parameter replaced, e.g. ``coupling.flow_max``.

    Setting ``coupling.flow_max`` also sets ``flow_min`` to its negative.
    """
    if path == "coupling.flow_max":
        return with_flow_bound(s, value)
    if path == "coupling.flow_min":
        return replace(s, coupling=CouplingSpec(value, s.coupling.flow_max))
    if path == "maturity":
        return replace(s, maturity=value)
    parts = path.split(".")
    if len(parts) == 2 and parts[0] in ("market_a", "market_b") and parts[1] in ("alpha", "beta", "demand_vol",
                                                                                   "demand_const"):
        m = getattr(s, parts[0])
        return replace(s, **{parts[0]: replace(m, **{parts[1]: value})})
    raise ScenarioError(path, "unsupported sweep parameter")
