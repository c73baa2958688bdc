from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from mcontrol.cli import dumps_report, main, run_pipeline
from mcontrol.errors import ParseError, ValidationError
from mcontrol.problem import (
    B_NORMALIZED,
    SCHEMA,
    canonicalize,
    emit_problem,
    parse_problem,
    preset_problem,
    problem_from_document,
)


def write(tmp_path, doc, name="p.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=2), encoding="utf-8")
    return path


def generator_doc():
    return {
        "schema": SCHEMA,
        "name": "gen",
        "t1": 0.5,
        "spec_y": {"kind": "shifted_square", "count": 4, "shift": 1.0},
        "spec_z": {"kind": "square", "count": 4},
        "coupling": {"kind": "identity_scaled", "alpha": 2.0},
        "b_y": {"kind": "alternating_over_m", "scale": 3.0},
        "b_z": {"kind": "zero"},
        "x0_y": {"kind": "harmonic"},
        "x0_z": [0.0, 1.0, 0.0, 0.5],
        "n_synth": 2,
        "n_verify": 4,
        "tolerances": {"verify_tol": 1e-7},
        "options": {"tikhonov": 0.0},
    }


# -- presets -------------------------------------------------------------------------

def test_example1_preset_expansion():
    p = preset_problem("example1", modes=8)
    m = np.arange(1, 9, dtype=float)
    np.testing.assert_array_equal(p.spec_y, 1 - m**2)
    np.testing.assert_array_equal(p.spec_z, -(m**2))
    np.testing.assert_array_equal(p.coupling, np.eye(8))
    np.testing.assert_allclose(p.b_y, B_NORMALIZED * (-1) ** (m - 1) / m, rtol=1e-15)
    assert not np.any(p.b_z)
    np.testing.assert_allclose(p.x0_y, 1 / m)


def test_example2_preset_expansion():
    p = preset_problem("example2", modes=8, alpha=1.0)
    m = np.arange(1, 9, dtype=float)
    np.testing.assert_array_equal(p.spec_y, -(m**2))
    np.testing.assert_array_equal(p.spec_z, -(m**2))
    np.testing.assert_array_equal(p.coupling, np.eye(8))
    np.testing.assert_allclose(p.x0_z, np.exp(-m), rtol=1e-15)
    assert not np.any(p.x0_y)


def test_raw_normalization():
    p = preset_problem("example1", modes=3, normalization="raw")
    np.testing.assert_allclose(p.b_y, [math.pi, -math.pi / 2, math.pi / 3], rtol=1e-15)


def test_example1_interleaving():
    from mcontrol.spectrum import merged_modes

    model = preset_problem("example1", modes=6).build_model()
    merged = [m.eigenvalue for m in merged_modes(model)]
    expected = []
    for m in range(1, 7):
        expected += [1.0 - m * m, -float(m * m)]
    assert merged == expected


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset_problem("example3")


# -- parsing -----------------------------------------------------------------------------

def test_generators_expand(tmp_path):
    p = parse_problem(write(tmp_path, generator_doc()))
    np.testing.assert_array_equal(p.spec_y, [0.0, -3.0, -8.0, -15.0])
    np.testing.assert_array_equal(p.coupling, 2.0 * np.eye(4))
    np.testing.assert_allclose(p.b_y, [3.0, -1.5, 1.0, -0.75])
    assert p.tolerances == {"verify_tol": 1e-7}


def test_round_trip(tmp_path):
    src = write(tmp_path, generator_doc())
    p = parse_problem(src)
    out = tmp_path / "canonical.json"
    emit_problem(p, out)
    again = parse_problem(out)
    assert again == p
    assert json.loads(out.read_text()) == canonicalize(generator_doc())


def test_round_trip_presets(tmp_path):
    for name in ("example1", "example2"):
        p = preset_problem(name, modes=5)
        path = tmp_path / f"{name}.json"
        emit_problem(p, path)
        assert parse_problem(path) == p


def test_wrong_coupling_row_length(tmp_path):
    doc = generator_doc()
    doc["coupling"] = {"kind": "dense", "rows": [[1, 0, 0, 0], [0, 1, 0], [0, 0, 1, 0], [0, 0, 0, 1]]}
    with pytest.raises(ValidationError) as exc:
        parse_problem(write(tmp_path, doc))
    assert any("row 1" in v for v in exc.value.violations)


def test_validation_collects_all_violations(tmp_path):
    doc = generator_doc()
    doc["t1"] = -1.0
    doc["b_z"] = [1.0, 2.0]
    doc["tolerances"] = {"verify_tol": 0.0}
    with pytest.raises(ValidationError) as exc:
        parse_problem(write(tmp_path, doc))
    assert len(exc.value.violations) == 3


def test_parse_error_reports_line_and_field(tmp_path):
    doc = generator_doc()
    doc["t1"] = "soon"
    with pytest.raises(ParseError) as exc:
        parse_problem(write(tmp_path, doc))
    assert exc.value.field == "t1"
    assert exc.value.line == 4
    assert "line 4" in str(exc.value)


def test_malformed_json(tmp_path):
    with pytest.raises(ParseError) as exc:
        parse_problem(write(tmp_path, '{\n  "schema": "mcontrol.problem/1",\n  "t1": ,\n}'))
    assert exc.value.line == 3


def test_schema_and_unknown_keys():
    doc = generator_doc()
    doc["schema"] = "other/2"
    with pytest.raises(ParseError):
        problem_from_document(doc)
    doc = generator_doc()
    doc["options"] = {"nonsense": 1}
    with pytest.raises(ParseError):
        problem_from_document(doc)
    doc = generator_doc()
    doc["spec_y"] = {"kind": "cubic", "count": 3}
    with pytest.raises(ParseError):
        problem_from_document(doc)


# -- pipeline ------------------------------------------------------------------------

def test_run_pipeline_analyze_example1():
    rep = run_pipeline(preset_problem("example1"), "analyze")
    sec = rep.data["analysis"]
    assert sec["gram"]["verdict"] == "StronglyMinimalEvidence"
    assert abs(sec["dirichlet"]["limit"]) < 0.05
    assert sec["dirichlet"]["excluded_nonnegative"] == ["y1"]
    assert sec["series"]["verdict"] == "Convergent"
    assert sec["gap_certificate"]["excluded"] == ["y1"]


def test_run_pipeline_synthesize_and_verify():
    problem = preset_problem("example1")
    syn = run_pipeline(problem, "synthesize")
    assert syn.data["synthesis"]["max_relative_residual"] <= 1e-8
    ver = run_pipeline(problem, "verify")
    assert ver.data["verification"]["verdict"] is True and ver.exit_code == 0


def test_report_is_deterministic():
    a = dumps_report(run_pipeline(preset_problem("example2"), "report").data)
    b = dumps_report(run_pipeline(preset_problem("example2"), "report").data)
    assert a == b


def test_report_float_format():
    text = dumps_report({"x": 0.1, "y": math.inf, "z": math.nan, "v": np.array([1.0 / 3.0])})
    doc = json.loads(text)
    assert doc["x"] == 0.1 and doc["y"] == "Infinity" and doc["z"] == "NaN"
    assert "0.33333333333333331" in text


# -- command line --------------------------------------------------------------------------

def test_cli_demo_writes_outputs(tmp_path, capsys):
    csv_path, json_path = tmp_path / "u.csv", tmp_path / "r.json"
    code = main(["demo", "example2", "--emit-control", str(csv_path), "--samples", "50", "--json", str(json_path)])
    assert code == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["t", "u"] and len(rows) == 51
    assert float(rows[-1][0]) == 1.0
    report = json.loads(json_path.read_text())
    assert report["verification"]["verdict"] is True
    assert "verify: verdict = True" in capsys.readouterr().out


def test_cli_problem_file_and_overrides(tmp_path):
    src = write(tmp_path, generator_doc())
    json_path = tmp_path / "r.json"
    assert main(["verify", "--problem", str(src), "--n-synth", "3", "--json", str(json_path)]) == 0
    report = json.loads(json_path.read_text())
    assert report["synthesis"]["n_synth"] == 3


def test_cli_emit_problem_round_trip(tmp_path):
    out = tmp_path / "p.json"
    assert main(["spectrum", "--demo", "example1", "--modes", "6", "--emit-problem", str(out)]) == 0
    assert parse_problem(out) == preset_problem("example1", modes=6)


def test_cli_exit_code_two_on_false_verdict(tmp_path):
    # a tiny synthesis tolerance cannot be met by a regularized solve
    out = tmp_path / "p.json"
    emit_problem(preset_problem("example1", modes=8), out)
    doc = json.loads(out.read_text())
    doc["tolerances"] = {"verify_tol": 1e-30}
    doc["options"] = {"tikhonov": 1.0}
    write(tmp_path, doc, "strict.json")
    assert main(["verify", "--problem", str(tmp_path / "strict.json")]) == 2


def test_cli_errors_exit_one(tmp_path, capsys):
    assert main(["verify", "--problem", str(tmp_path / "missing.json")]) == 1
    bad = write(tmp_path, '{"schema": 3}', "bad.json")
    assert main(["analyze", "--problem", str(bad)]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["spectrum", "--demo", "example1", "--emit-control", str(tmp_path / "u.csv")]) == 1
