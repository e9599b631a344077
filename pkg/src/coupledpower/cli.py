"""Command line entry point.

Exit codes: 0 success, 2 parse error (bad arguments or unreadable file),
3 invalid scenario, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .coupling import spot_prices
from .model import StateVector
from .montecarlo import Payoff, mc_price, sample_terminal, simulate_spots, spot_log_moments
from .pricing import EnumerationError, PricingEngine, margrabe_value
from .scenario import (
    NumericsError,
    ParseError,
    ScenarioError,
    bundled_path,
    load_scenario,
    set_param,
    with_flow_bound,
)

EXIT_OK, EXIT_PARSE, EXIT_SCENARIO, EXIT_NUMERICS = 0, 2, 3, 4

SWEEP_COLUMNS = [
    "E_max", "F_A", "F_A_err", "F_B", "F_B_err", "coupling_rate", "coupling_rate_err",
    "ptr_structural", "ptr_err", "ptr_margrabe", "vol_A", "vol_B", "spot_corr",
    "mc_F_A", "mc_se_A", "mc_F_B", "mc_se_B", "mc_ptr", "mc_se_ptr", "mc_coupling_rate", "mc_se_coupling_rate",
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ParseError(message)


def quantity(text: str) -> float:
    """Power quantity in MW; accepts ``GW``/``MW`` suffixes (bare numbers are MW)."""
    s = text.strip()
    scale = 1.0
    if s.upper().endswith("GW"):
        s, scale = s[:-2], 1000.0
    elif s.upper().endswith("MW"):
        s = s[:-2]
    try:
        return float(s) * scale
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a power quantity: {text!r}") from None


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def _write_csv(rows: list[dict], columns: list[str], out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])


def _emit(rows, columns, path):
    if path:
        with open(path, "w", newline="") as fh:
            _write_csv(rows, columns, fh)
    else:
        buf = io.StringIO()
        _write_csv(rows, columns, buf)
        sys.stdout.write(buf.getvalue())


def _finite(*values):
    for v in values:
        if not math.isfinite(v):
            raise NumericsError(f"non-finite result {v!r}")


def _scenario(args):
    s = load_scenario(args.scenario or bundled_path("table1"))
    if getattr(args, "seed", None) is not None:
        s = replace(s, numerics=replace(s.numerics, seed=args.seed))
    if getattr(args, "tolerance", None) is not None:
        s = replace(s, numerics=_wrap_numerics(s, quadrature_tolerance=args.tolerance))
    if getattr(args, "flow_max", None) is not None:
        s = with_flow_bound(s, args.flow_max)
    if getattr(args, "maturity", None) is not None:
        if args.maturity < s.valuation_time:
            raise ScenarioError("maturity", "must not precede valuation_time")
        s = replace(s, maturity=args.maturity)
    return s


def _wrap_numerics(s, **kw):
    try:
        return replace(s.numerics, **kw)
    except ValueError as exc:
        raise ScenarioError("numerics", str(exc)) from None


def cmd_spot(args):
    s = _scenario(args)
    eng = PricingEngine(s)
    state = StateVector.from_vector(eng.law.mean, s.maturity)
    out = spot_prices(state, s, s.maturity)
    _emit([{"flow": out.flow, "regime": out.regime.name, "event": out.key.label(),
            "price_A": out.price_a, "price_B": out.price_b}],
          ["flow", "regime", "event", "price_A", "price_B"], args.out)


def cmd_forward(args):
    s = _scenario(args)
    d = PricingEngine(s).forward_price(args.market)
    _finite(d.total)
    _emit([{"market": args.market, "maturity": s.maturity, "value": d.total, "error": d.quadrature_error}],
          ["market", "maturity", "value", "error"], args.out)


def cmd_call(args):
    s = _scenario(args)
    eng = PricingEngine(s)
    rows = []
    for k in args.strike:
        d = eng.call_value(args.market, k)
        _finite(d.total)
        rows.append({"market": args.market, "strike": k, "value": d.total, "error": d.quadrature_error})
    _emit(rows, ["market", "strike", "value", "error"], args.out)


def cmd_ptr(args):
    s = _scenario(args)
    d = PricingEngine(s).transmission_right_value(args.direction)
    _finite(d.total)
    _emit([{"direction": args.direction, "value": d.total, "error": d.quadrature_error}],
          ["direction", "value", "error"], args.out)


def cmd_coupling_rate(args):
    s = _scenario(args)
    d = PricingEngine(s).coupling_rate()
    _finite(d.total)
    _emit([{"coupling_rate": d.total, "error": d.quadrature_error}], ["coupling_rate", "error"], args.out)


def _mc(s, n):
    return simulate_spots(s, sample_terminal(s, n))


def cmd_margrabe(args):
    s = _scenario(args)
    n = args.samples or s.numerics.mc_samples
    mom = spot_log_moments(_mc(s, n))
    value = margrabe_value(mom, s.valuation_time, s.maturity)
    _finite(value)
    _emit([{"value": value, "vol_A": mom.vol_a, "vol_B": mom.vol_b, "correlation": mom.correlation,
            "mean_A": mom.mean_a, "mean_B": mom.mean_b, "degenerate": int(mom.degenerate)}],
          ["value", "vol_A", "vol_B", "correlation", "mean_A", "mean_B", "degenerate"], args.out)


def sweep_rows(s, param, values, mc_samples):
    rows = []
    for v in values:
        sv = set_param(s, param, v)
        eng = PricingEngine(sv)
        fa, fb = eng.forward_price("A"), eng.forward_price("B")
        cr = eng.coupling_rate()
        ptr = eng.transmission_right_value()
        row = {"E_max": sv.coupling.flow_max, "F_A": fa.total, "F_A_err": fa.quadrature_error,
               "F_B": fb.total, "F_B_err": fb.quadrature_error,
               "coupling_rate": cr.total, "coupling_rate_err": cr.quadrature_error,
               "ptr_structural": ptr.total, "ptr_err": ptr.quadrature_error}
        spots = _mc(sv, mc_samples)
        mom = spot_log_moments(spots)
        row.update(ptr_margrabe=margrabe_value(mom, sv.valuation_time, sv.maturity),
                   vol_A=mom.vol_a, vol_B=mom.vol_b, spot_corr=mom.correlation)
        for col, se, payoff in [("mc_F_A", "mc_se_A", Payoff("forward", "A")),
                                ("mc_F_B", "mc_se_B", Payoff("forward", "B")),
                                ("mc_ptr", "mc_se_ptr", Payoff("ptr")),
                                ("mc_coupling_rate", "mc_se_coupling_rate", Payoff("coupling"))]:
            est = mc_price(payoff, spots)
            row[col], row[se] = est.value, est.standard_error
        _finite(*(x for x in row.values()))
        rows.append(row)
    return rows


def cmd_sweep(args):
    if not args.step > 0:
        raise ParseError("--step must be > 0")
    if args.start > args.stop:
        raise ParseError("--from must not exceed --to")
    s = _scenario(args)
    count = int(math.floor((args.stop - args.start) / args.step + 1e-9)) + 1
    values = [args.start + i * args.step for i in range(count)]
    rows = sweep_rows(s, args.param, values, args.samples or s.numerics.mc_samples)
    _emit(rows, SWEEP_COLUMNS, args.out)


def cmd_validate(args):
    s = _scenario(args)
    n = args.samples or s.numerics.mc_samples
    eng = PricingEngine(s)
    spots = _mc(s, n)
    checks = []
    tp = eng.total_probability()
    checks.append(("partition_closure", abs(tp.total - 1.0) <= 1e-3, f"sum={tp.total:.9g}"))
    for name, an, payoff in [("forward_A", eng.forward_price("A"), Payoff("forward", "A")),
                             ("forward_B", eng.forward_price("B"), Payoff("forward", "B")),
                             ("ptr", eng.transmission_right_value(), Payoff("ptr")),
                             ("coupling_rate", eng.coupling_rate(), Payoff("coupling"))]:
        mc = mc_price(payoff, spots)
        tol = 3.0 * mc.standard_error + an.quadrature_error + 1e-12
        checks.append((f"{name}_vs_mc", abs(an.total - mc.value) <= tol,
                       f"analytic={an.total:.9g} mc={mc.value:.9g} tol={tol:.3g}"))
    text = "".join(f"{'PASS' if ok else 'FAIL'} {name} {detail}\n" for name, ok, detail in checks)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not all(ok for _, ok, _ in checks):
        return EXIT_NUMERICS
    return EXIT_OK


def cmd_simulate(args):
    s = _scenario(args)
    n = args.samples or 1000
    batch = sample_terminal(s, n)
    spots = simulate_spots(s, batch)
    names = [f"log_{f.name}" for f in s.fuels] + ["D_A", "D_B"]
    cols = names + ["flow", "regime", "price_A", "price_B"]
    rows = []
    for i in range(n):
        row = {c: float(batch.states[i, j]) for j, c in enumerate(names)}
        row.update(flow=float(spots.flow[i]), regime=int(spots.regime[i]),
                   price_A=float(spots.price_a[i]), price_B=float(spots.price_b[i]))
        rows.append(row)
    _emit(rows, cols, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coupledpower", description="Two-zone coupled electricity market pricer.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, mc=False):
        sp.add_argument("--scenario", help="scenario JSON (default: bundled table1)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--tolerance", type=float, help="quadrature tolerance")
        sp.add_argument("--flow-max", type=quantity, help="symmetric interconnection bound, e.g. 4GW")
        sp.add_argument("--maturity", type=float)
        sp.add_argument("--out", help="write CSV here instead of stdout")
        if mc:
            sp.add_argument("--samples", type=int, help="Monte Carlo sample count")

    sp = sub.add_parser("spot", help="spot outcome at the expected terminal state")
    common(sp)
    sp.set_defaults(func=cmd_spot)

    sp = sub.add_parser("forward", help="structural forward price")
    common(sp)
    sp.add_argument("--market", choices=("A", "B"), default="A")
    sp.set_defaults(func=cmd_forward)

    sp = sub.add_parser("call", help="European call on a zone's spot price")
    common(sp)
    sp.add_argument("--market", choices=("A", "B"), default="A")
    sp.add_argument("--strike", type=float, nargs="+", required=True)
    sp.set_defaults(func=cmd_call)

    sp = sub.add_parser("ptr", help="transmission right value")
    common(sp)
    sp.add_argument("--direction", choices=("both", "A_to_B", "B_to_A"), default="both")
    sp.set_defaults(func=cmd_ptr)

    sp = sub.add_parser("coupling-rate", help="probability of equal spot prices")
    common(sp)
    sp.set_defaults(func=cmd_coupling_rate)

    sp = sub.add_parser("margrabe", help="lognormal spread-option comparator")
    common(sp, mc=True)
    sp.set_defaults(func=cmd_margrabe)

    sp = sub.add_parser("sweep", help="price grid over one parameter")
    common(sp, mc=True)
    sp.add_argument("--param", default="coupling.flow_max")
    sp.add_argument("--from", dest="start", type=quantity, required=True)
    sp.add_argument("--to", dest="stop", type=quantity, required=True)
    sp.add_argument("--step", type=quantity, required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="partition closure and Monte Carlo agreement")
    common(sp, mc=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="terminal states and spot outcomes as CSV")
    common(sp, mc=True)
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rc = args.func(args)
        return EXIT_OK if rc is None else rc
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (NumericsError, EnumerationError, OverflowError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
