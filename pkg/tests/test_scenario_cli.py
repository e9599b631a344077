import copy
import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupledpower.cli import SWEEP_COLUMNS, main, quantity
from coupledpower.scenario import (
    VARIANTS,
    ParseError,
    ScenarioError,
    bundled_path,
    bundled_scenario,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    set_param,
    terminal_std_to_vol,
)

DET_PRICE = 35.0 * math.exp(0.47)


@pytest.fixture
def doc():
    return json.loads(bundled_path("table1").read_text())


def _write(tmp_path, d, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def _zero_vol(d):
    for f in d["fuels"]:
        f.pop("terminal_log_std", None)
        f["volatility"] = 0.0
    for z in ("A", "B"):
        d["markets"][z]["demand"].pop("terminal_variance", None)
        d["markets"][z]["demand"]["vol"] = 0.0
    return d


# loading

def test_bundled_table1(t1_bundled):
    s = t1_bundled
    assert s.market_a.alpha == 0.56
    assert s.market_b.alpha == 0.89
    assert s.market_a.beta == pytest.approx(-1e-5, rel=1e-12)
    assert s.coupling.flow_max == 4000.0
    assert s.coupling.flow_min == -4000.0
    assert [t.capacity_const for t in s.market_a.technologies] == [48000.0, 18000.0]
    assert s.market_b.demand_const == 45000.0


def test_terminal_moments_converted(t1_bundled):
    s = t1_bundled
    tau = s.maturity - s.valuation_time
    a = s.market_a.demand_mean_reversion
    var = s.market_a.demand_vol ** 2 * -math.expm1(-2 * a * tau) / (2 * a)
    assert var == pytest.approx(0.5e6, rel=1e-12)
    f = s.fuels[0]
    fvar = f.volatility ** 2 * -math.expm1(-2 * f.mean_reversion * tau) / (2 * f.mean_reversion)
    assert math.sqrt(fvar) == pytest.approx(0.01, rel=1e-12)


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_variants_load(name):
    s = bundled_scenario(name)
    dem_var, fuel_std = VARIANTS[name]
    m = s.market_b
    var = m.demand_vol ** 2 * -math.expm1(-2 * m.demand_mean_reversion) / (2 * m.demand_mean_reversion)
    assert var == pytest.approx(dem_var * 1e6, rel=1e-12)
    f = s.fuels[3]
    assert f.volatility ** 2 * -math.expm1(-2.0) / 2.0 == pytest.approx(fuel_std ** 2, rel=1e-12)


def test_gw_and_mw_files_agree(doc, tmp_path):
    mw = copy.deepcopy(doc)
    mw["units"] = {"power": "MW", "beta": "per_MW"}
    for z in ("A", "B"):
        m = mw["markets"][z]
        m["beta"] = m["beta"] / 1000.0
        for t in m["technologies"]:
            t["capacity"] *= 1000.0
        m["demand"]["const"] *= 1000.0
        m["demand"]["terminal_variance"] *= 1e6
    mw["coupling"] = {"flow_min": -4000.0, "flow_max": 4000.0}
    a = load_scenario(_write(tmp_path, doc, "gw.json"))
    b = load_scenario(_write(tmp_path, mw, "mw.json"))
    for ma, mb in ((a.market_a, b.market_a), (a.market_b, b.market_b)):
        assert ma.beta == pytest.approx(mb.beta, rel=1e-12)
        assert ma.demand_vol == pytest.approx(mb.demand_vol, rel=1e-12)
        assert ma.demand_const == mb.demand_const
        assert ma.technologies == mb.technologies
    assert a.coupling == b.coupling


def test_round_trip_is_exact(tmp_path):
    for name in ["table1", *VARIANTS]:
        s = bundled_scenario(name)
        p = tmp_path / f"{name}.json"
        dump_scenario(s, p)
        assert load_scenario(p) == s


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2e4), st.floats(-2e4, 0.0), st.floats(-1e-3, -1e-7), st.floats(0.05, 5.0))
def test_round_trip_property(e_max, e_min, beta, maturity):
    s = bundled_scenario("table1")
    s = set_param(s, "coupling.flow_max", e_max)
    s = set_param(s, "coupling.flow_min", e_min)
    s = set_param(s, "market_a.beta", beta)
    s = set_param(s, "maturity", maturity)
    assert scenario_from_dict(json.loads(dump_scenario(s))) == s


def test_non_psd_correlation(doc, tmp_path):
    c = np.eye(6)
    c[0, 1] = c[1, 0] = 0.9
    c[0, 2] = c[2, 0] = 0.9
    c[1, 2] = c[2, 1] = -0.9
    doc["correlation"] = c.tolist()
    with pytest.raises(ScenarioError) as exc:
        load_scenario(_write(tmp_path, doc))
    assert exc.value.path == "correlation"


def test_positive_lower_flow_bound(doc, tmp_path):
    doc["coupling"]["flow_min"] = 1.0
    with pytest.raises(ScenarioError) as exc:
        load_scenario(_write(tmp_path, doc))
    assert exc.value.path.startswith("coupling")


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["markets"]["A"].update(beta=0.0) or d["markets"]["B"].update(beta=0.0), "markets"),
    (lambda d: d["markets"]["A"]["technologies"][0].update(fuel="coal"), "markets.A.technologies[0].fuel"),
    (lambda d: d["fuels"][0].update(initial_cost=-1.0), "fuels[0].initial_cost"),
    (lambda d: d["numerics"].update(bogus=1), "numerics"),
    (lambda d: d["units"].update(power="kW"), "units.power"),
    (lambda d: d.update(correlation=[[1.0]]), "correlation"),
    (lambda d: d["markets"]["B"].pop("alpha"), "markets.B.alpha"),
    (lambda d: d["fuels"].append(dict(d["fuels"][0])), "fuels[4].name"),
])
def test_validation_errors_name_the_field(doc, tmp_path, mutate, path):
    mutate(doc)
    with pytest.raises(ScenarioError) as exc:
        load_scenario(_write(tmp_path, doc))
    assert exc.value.path == path


def test_fuel_cap(doc, tmp_path):
    for i in range(2):
        f = dict(doc["fuels"][0], name=f"extra{i}")
        doc["fuels"].append(f)
    with pytest.raises(ScenarioError) as exc:
        load_scenario(_write(tmp_path, doc))
    assert exc.value.path == "fuels"


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(bad)
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "missing.json")


def test_terminal_std_needs_horizon():
    with pytest.raises(ValueError):
        terminal_std_to_vol(0.1, 1.0, 0.0)


def test_set_param_unknown_path(t1_bundled):
    with pytest.raises(ScenarioError):
        set_param(t1_bundled, "market_a.colour", 1.0)


# CLI

def _run(capsys, *argv):
    rc = main(list(argv))
    out, err = capsys.readouterr()
    return rc, out, err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_quantity_units():
    assert quantity("4GW") == 4000.0
    assert quantity("250MW") == 250.0
    assert quantity("1500") == 1500.0
    assert quantity("0.5 gw") == 500.0


def test_spot_command(capsys):
    rc, out, _ = _run(capsys, "spot", "--flow-max", "4GW")
    assert rc == 0
    (row,) = _rows(out)
    assert float(row["flow"]) == -2000.0
    assert row["regime"] == "COUPLED_DISC_A"
    assert float(row["price_A"]) == pytest.approx(DET_PRICE, rel=1e-8)
    assert float(row["price_B"]) == pytest.approx(DET_PRICE, rel=1e-8)


def test_zero_vol_forward_equals_spot(capsys, doc, tmp_path):
    path = _write(tmp_path, _zero_vol(doc))
    _, spot, _ = _run(capsys, "spot", "--scenario", path)
    _, fwd, _ = _run(capsys, "forward", "--scenario", path, "--market", "B")
    assert _rows(fwd)[0]["value"] == _rows(spot)[0]["price_B"]


def test_call_and_ptr_commands(capsys):
    rc, out, _ = _run(capsys, "call", "--market", "A", "--strike", "0", "50", "100")
    assert rc == 0
    vals = [float(r["value"]) for r in _rows(out)]
    assert vals[0] >= vals[1] >= vals[2] >= 0.0
    rc, out, _ = _run(capsys, "ptr", "--direction", "B_to_A", "--flow-max", "1GW")
    assert rc == 0
    assert float(_rows(out)[0]["value"]) > 0.0


def test_coupling_rate_and_margrabe(capsys):
    rc, out, _ = _run(capsys, "coupling-rate", "--flow-max", "0")
    assert rc == 0
    assert float(_rows(out)[0]["coupling_rate"]) == 0.0
    rc, out, _ = _run(capsys, "margrabe", "--samples", "20000")
    assert rc == 0
    row = _rows(out)[0]
    assert float(row["value"]) > 0.0
    assert row["degenerate"] == "0"


def test_sweep_columns_and_rows(capsys, tmp_path):
    out_csv = tmp_path / "sweep.csv"
    rc, _, _ = _run(capsys, "sweep", "--from", "0", "--to", "2GW", "--step", "1GW", "--samples", "5000",
                    "--out", str(out_csv))
    assert rc == 0
    text = out_csv.read_text()
    assert text.splitlines()[0].split(",") == SWEEP_COLUMNS
    rows = _rows(text)
    assert [float(r["E_max"]) for r in rows] == [0.0, 1000.0, 2000.0]


def test_csv_uses_nine_significant_digits(capsys):
    _, out, _ = _run(capsys, "spot")
    assert _rows(out)[0]["price_A"] == "%.9g" % DET_PRICE


def test_output_is_deterministic(capsys):
    args = ("sweep", "--from", "4GW", "--to", "4GW", "--step", "1GW", "--samples", "3000", "--seed", "3")
    _, a, _ = _run(capsys, *args)
    _, b, _ = _run(capsys, *args)
    assert a == b
    _, c, _ = _run(capsys, "simulate", "--samples", "50", "--seed", "4")
    _, d, _ = _run(capsys, "simulate", "--samples", "50", "--seed", "4")
    assert c == d
    assert len(_rows(c)) == 50


def test_validate_passes(capsys):
    rc, out, _ = _run(capsys, "validate", "--samples", "200000")
    assert rc == 0
    assert all(line.startswith("PASS") for line in out.strip().splitlines())


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    ["spot", "--flow-max", "lots"],
    ["sweep", "--from", "2GW", "--to", "0", "--step", "1GW"],
    ["sweep", "--from", "0", "--to", "2GW", "--step", "0"],
    ["call", "--market", "A"],
])
def test_parse_exit_code(capsys, argv):
    assert _run(capsys, *argv)[0] == 2


def test_exit_codes_for_files(capsys, doc, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[")
    assert _run(capsys, "spot", "--scenario", str(bad))[0] == 2
    assert _run(capsys, "spot", "--scenario", str(tmp_path / "nope.json"))[0] == 2
    doc["coupling"]["flow_min"] = 2.0
    assert _run(capsys, "spot", "--scenario", _write(tmp_path, doc))[0] == 3
    assert _run(capsys, "forward", "--maturity", "-1")[0] == 3
    assert _run(capsys, "forward", "--tolerance", "0")[0] == 3


@pytest.mark.parametrize("zero_vol", [True, False])
def test_numerics_exit_code(capsys, doc, tmp_path, zero_vol):
    # prices overflow double precision
    doc["markets"]["A"]["alpha"] = 800.0
    if zero_vol:
        _zero_vol(doc)
    rc, _, err = _run(capsys, "forward", "--scenario", _write(tmp_path, doc))
    assert rc == 4
    assert "numerical failure" in err


def test_global_merit_orders_from_file(capsys, doc, tmp_path):
    doc["numerics"]["merit_orders"] = "global"
    rc, out, _ = _run(capsys, "coupling-rate", "--scenario", _write(tmp_path, doc))
    assert rc == 0
    assert 0.0 <= float(_rows(out)[0]["coupling_rate"]) <= 1.0


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "coupledpower.cli", "spot"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("flow,regime,event,price_A,price_B")
