import csv
import io
import json
import math
import os

import pytest
from hypothesis import given, settings, strategies as st

from darkarray import cli
from darkarray.config import (
    LatticeSection,
    NumericsSection,
    RunConfig,
    ScanSection,
    parse_config_text,
    parse_range,
    serialize,
)
from darkarray.errors import ConfigError, NumericalError

PREP = """\
[run]
experiment = prepare_dark

[lattice]
spacing_a = 0.25

[scan]
N = 6, 8

[numerics]
omega_points = 8
"""


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# --- configuration --------------------------------------------------------------

def test_defaults_round_trip():
    text = serialize(RunConfig())
    assert serialize(parse_config_text(text)) == text


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["prepare_dark", "iswap", "selective_prepare", "dark_decay_scan"]),
       st.integers(1, 400), st.floats(0.01, 0.49), st.lists(st.integers(1, 300), max_size=4),
       st.lists(st.floats(1e-6, 10.0), max_size=3), st.integers(0, 2 ** 31))
def test_config_round_trip_is_byte_identical(exp, n, a, ns, om, seed):
    cfg = RunConfig(exp, LatticeSection(n_atoms_per_array=n, spacing_a=a, n_arrays=1 if exp in (
        "prepare_dark", "dark_decay_scan") else 2), ScanSection(N=tuple(ns), omega0=tuple(om)),
        numerics=NumericsSection(seed=seed))
    text = serialize(cfg)
    back = parse_config_text(text)
    assert back == cfg
    assert serialize(back) == text


def test_config_errors_name_line_and_field():
    with pytest.raises(ConfigError, match=r"lattice\.spacing_b \(line 3\)"):
        parse_config_text("[lattice]\nspacing_a = 0.2\nspacing_b = 0.1\n")
    with pytest.raises(ConfigError, match=r"line 2"):
        parse_config_text("[numerics]\nn_max = two\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[extra]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown experiment"):
        parse_config_text("[run]\nexperiment = teleport\n")
    with pytest.raises(ConfigError, match="two arrays"):
        parse_config_text("[run]\nexperiment = iswap\n")
    with pytest.raises(ConfigError):
        parse_config_text("[numerics]\nn_max = 4\n")


def test_parse_range_forms():
    assert parse_range("1..5") == [1, 2, 3, 4, 5]
    assert parse_range("0.05:0.3:0.05") == [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
    assert parse_range("1, 2.5") == [1.0, 2.5]
    assert parse_range("") == []
    for bad in ("5..1", "1:2", "0:1:0"):
        with pytest.raises(ConfigError):
            parse_range(bad)


# --- schema ---------------------------------------------------------------------

def test_headers_are_pinned():
    assert cli.SCHEMA_VERSION == 1
    assert cli.HEADERS["prepare_dark"] == ["N", "a_over_lambda", "sigma", "omega0_opt", "epsilon", "t_star",
                                           "P0", "P2", "warnings"]
    assert cli.HEADERS["iswap"] == ["N", "a_over_lambda", "l_over_a", "sigma", "g_qa", "gamma_qa", "gamma_q",
                                    "T_g", "fidelity", "error_total", "prediction_3GT5", "warnings"]
    assert cli.HEADERS["kspace_table"] == ["polarization", "a_over_lambda", "l_over_a", "k", "g_k", "gamma_k",
                                           "warnings"]
    assert cli.HEADERS["drive_geometry"] == ["p", "alpha_deg", "a_over_lambda", "feasible", "beta_deg", "K_z",
                                             "K_x", "warnings"]
    assert set(cli.HEADERS) == {"prepare_dark", "selective_prepare", "iswap", "dark_decay_scan", "kspace_table",
                                "lamb_dicke_compare", "drive_geometry"}
    assert all(h[-1] == "warnings" for h in cli.HEADERS.values())


# --- run ------------------------------------------------------------------------

def test_run_rows_record_and_determinism(tmp_path):
    cfg = parse_config_text(PREP)
    rec = cli.run(cfg, str(tmp_path / "a"), workers=1)
    cli.run(cfg, str(tmp_path / "b"), workers=2)
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    assert a == b
    rows = list(csv.DictReader(io.StringIO(a.decode())))
    assert [r["N"] for r in rows] == ["6", "8"]
    assert all(0 <= float(r["epsilon"]) <= 1 for r in rows)
    meta = json.loads((tmp_path / "a" / "run.json").read_text())
    for key in ("schema_version", "software_version", "config_hash", "seed", "points", "wall_time_s",
                "warnings", "truncated", "columns"):
        assert key in meta
    assert meta["config_hash"] == cfg.digest() and meta["truncated"] is False
    assert rec["n_points"] == 2


def test_warnings_are_coded(tmp_path):
    text = PREP.replace("[scan]\nN = 6, 8", "[scan]\nN = 4\nsigma = 0.001") + \
        "\n[motion]\nomega_T = 5.0\nn_realizations = 2\n"
    rec = cli.run(parse_config_text(text), str(tmp_path), workers=1)
    codes = {w["code"] for w in rec["warnings"]}
    assert "W_FAST_MOTION_TRAP" in codes
    assert codes <= set(cli.WARNING_CODES)


def test_main_exit_codes(tmp_path, monkeypatch, capsys):
    good = _write(tmp_path, PREP.replace("N = 6, 8", "N = 4") + f"\n[output]\ndirectory = {tmp_path / 'o'}\n")
    assert cli.main(["run", good]) == 0
    assert json.loads(capsys.readouterr().out)["points"] == 1
    bad = _write(tmp_path, "[lattice]\nspacing_a = -1\n", "bad.ini")
    assert cli.main(["run", bad]) == 1
    assert cli.main(["validate", str(tmp_path / "missing.ini")]) == 1

    def boom(*a, **k):
        raise NumericalError("singular")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", good]) == 2


def test_worker_env(monkeypatch):
    monkeypatch.setenv(cli.WORKERS_ENV, "3")
    assert cli.worker_count() == 3
    monkeypatch.setenv(cli.WORKERS_ENV, "zero")
    with pytest.raises(ConfigError):
        cli.worker_count()


# --- validate -------------------------------------------------------------------

def _validate(text):
    return cli.validate(parse_config_text(text))


def test_validate_single_array_routes_to_krylov():
    rep = _validate("[lattice]\nn_atoms_per_array = 300\n")
    pt = rep["points"][0]
    assert pt["dimension"] == 45151 and pt["route"] == "krylov" and pt["krylov_m"] == 30


def test_validate_two_arrays_dimension():
    rep = _validate("[run]\nexperiment = iswap\n[lattice]\nn_atoms_per_array = 100\nn_arrays = 2\n")
    pt = rep["points"][0]
    assert pt["dimension"] == 20101
    # the default dense cap is 6000, so this size goes to Krylov
    assert pt["route"] == "krylov"
    rep = _validate("[run]\nexperiment = iswap\n[lattice]\nn_atoms_per_array = 100\nn_arrays = 2\n"
                    "[numerics]\ndense_cap = 30000\n")
    assert rep["points"][0]["route"] == "dense"


def test_validate_fast_motion_guard():
    rep = _validate("[motion]\nenabled = true\nsigma = 0.001\nomega_T = 5\n")
    assert "W_FAST_MOTION_TRAP" in rep["warnings"]
    assert "W_FAST_MOTION_TRAP" not in _validate("[motion]\nenabled = true\nsigma = 0.001\n")["warnings"]


# --- table commands ----------------------------------------------------------------

def test_kspace_table_command(tmp_path):
    out = tmp_path / "k.csv"
    assert cli.main(["kspace-table", "--pol", "z", "--l-over-a", "1..3", "--k", "q_a", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3 and all(float(r["gamma_k"]) == 0.0 for r in rows)
    assert float(rows[0]["k"]) == pytest.approx(math.pi / 0.25)
    out2 = tmp_path / "lc.csv"
    cli.main(["kspace-table", "--k", str(2 * math.pi), "--l-over-a", "1", "--out", str(out2)])
    assert next(csv.DictReader(out2.open()))["warnings"] == "W_LIGHT_CONE"


def test_drive_geometry_command(tmp_path):
    out = tmp_path / "g.csv"
    assert cli.main(["drive-geometry", "--alpha-grid", "0:90:45", "--a-grid", "0.1:0.5:0.2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 9
    for r in rows:
        if r["feasible"] == "1":
            assert float(r["K_z"]) == pytest.approx(math.pi / float(r["a_over_lambda"]), rel=1e-12)
