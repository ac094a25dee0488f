import csv
import io
import json
import subprocess
import sys

import pytest

from plmarkov.cli import main

T4 = '{"family":"schweitzer","E":4}'


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stationary_json(capsys):
    code, out, _ = run(capsys, "stationary", "--map", T4, "--level", "3", "--method", "power", "--tol", "1e-10")
    assert code == 0
    data = json.loads(out)
    assert len(data["pi"]) == 65 and data["residual"] <= 1e-9 and data["leak_mode"] == "renorm"


def test_closed_form_outputs(capsys):
    code, out, _ = run(capsys, "closed-form", "--E", "4", "--n", "3")
    data = json.loads(out)
    assert code == 0 and data["E"] == 4
    assert data["q"] == ["1/2", "2/5", "8/85"]
    assert data["p"][0] == "1/8"
    code, out, _ = run(capsys, "closed-form", "--E", "4", "--n", "5", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 5
    assert list(rows[0])[:2] == ["k", "q_k"]


def test_closed_form_verify(capsys):
    code, out, _ = run(capsys, "closed-form", "--E", "3", "--n", "2", "--verify", "10")
    assert code == 0
    assert json.loads(out)["verification"]["max_bound"] <= 1e-12


def test_sample_count_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--map", T4, "--samples", "0"])
    assert exc.value.code == 2


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["validate", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_json_is_usage_error(capsys):
    code, _, err = run(capsys, "validate", "--map", "{nope")
    assert code == 2 and err


def test_validation_failure_exit_1(capsys):
    bad = json.dumps({"family": "custom", "cells": [{"lo": "0", "hi": "1", "slope": "3/2", "intercept": "0"}]})
    code, out, _ = run(capsys, "validate", "--map", bad)
    assert code == 1 and json.loads(out)["passed"] is False


def test_cylinder(capsys):
    code, out, _ = run(capsys, "cylinder", "--label", "1,5")
    assert code == 0 and json.loads(out)["interval"] == ["4/5", "1"]


def test_push_and_iterate(capsys):
    code, out, _ = run(capsys, "push", "--density", '{"type":"pc","coeffs":{"1":"1"}}', "--steps", "1")
    assert code == 0
    data = json.loads(out)
    assert data["runs"] == [[1, 5, "1/5"]] and data["mass"] == "1"
    code, out, _ = run(capsys, "push", "--density", '{"type":"pc","coeffs":{"1":"1"}}', "--level", "2",
                       "--tol", "1e-8", "--format", "csv")
    header = out.splitlines()[0]
    assert code == 0 and header == "iter,l1_change,mass"


def test_first_passage_csv(capsys):
    code, out, _ = run(capsys, "first-passage", "--level", "3", "--nmax", "2", "--exact", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["value"] for r in rows] == ["1/5", "56/425"]
    assert list(rows[0]) == ["n", "value", "bound"]


def test_power_limit(capsys):
    code, out, _ = run(capsys, "power-limit", "--level", "3", "--j", "1", "--rows", "20")
    assert code == 0 and abs(json.loads(out)["limit"] - 0.125) < 5e-3


def test_reducible_is_exit_1(capsys):
    ident = json.dumps({"family": "custom", "cells": [
        {"lo": "0", "hi": "1", "slope": "1", "intercept": "0"},
        {"lo": "1", "hi": "2", "slope": "1", "intercept": "0"}]})
    code, _, err = run(capsys, "stationary", "--map", ident, "--size", "2")
    assert code == 1 and "reducible" in err


def test_simulate_series_csv(capsys):
    code, out, _ = run(capsys, "pushforward", "--density", '{"type":"uniform","a":"0","b":"1"}', "--set", "0,4",
                       "--steps", "3", "--samples", "2000", "--seed", "5", "--format", "csv")
    assert code == 0
    assert out.splitlines()[0] == "k,estimate,target,abs_err,stderr"
    code2, out2, _ = run(capsys, "pushforward", "--density", '{"type":"uniform","a":"0","b":"1"}', "--set",
                         "0,4", "--steps", "3", "--samples", "2000", "--seed", "5", "--format", "csv")
    assert out == out2


def test_simulate_and_mixing(capsys):
    code, out, _ = run(capsys, "simulate", "--density", '{"type":"uniform","a":"0","b":"4"}', "--steps", "2",
                       "--samples", "1000")
    data = json.loads(out)
    assert code == 0 and data["stamp"]["seed"] == 0 and data["cells"] == 17
    code, out, _ = run(capsys, "mixing", "--set", "0,4", "--steps", "2", "--samples", "1000", "--seed", "9")
    assert code == 0 and json.loads(out)["series"][0]["target"] == 0.25


def test_liminf_and_bugiel(capsys):
    code, out, _ = run(capsys, "liminf-limsup", "--starts", "0.5", "--horizon", "1", "--burn-in", "0")
    assert code == 0 and json.loads(out)["series"][0]["max"] == 2.5
    code, out, _ = run(capsys, "bugiel-check", "--r", "2", "--x", "3.7")
    data = json.loads(out)
    assert code == 0 and data["value"] == "0" and data["witness"] == [13, 13]
    code, _, err = run(capsys, "bugiel-check", "--r", "2", "--x", "3.7", "--search-bound", "5")
    assert code == 2 and "12" in err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "plmarkov", "closed-form", "--n", "1"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["q"] == ["1/2"]
