"""End-to-end command-line runs on temporary directories."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from losscost.cli import main

K1_MODEL = """{
  "classes": [{"lambda": 1.0, "mu": 1.0, "bandwidth": 1, "omega": 1}],
  "policy": {"type": "full_sharing", "capacity": 2}
}
"""

SYMMETRIC_MODEL = """{
  "classes": [
    {"lambda": 1.0, "mu": 1.0, "bandwidth": 1, "omega": 1},
    {"lambda": 0.5, "mu": 1.0, "bandwidth": 1, "omega": 2}
  ],
  "policy": {"type": "full_sharing", "capacity": 3}
}
"""

ASYMMETRIC_MODEL = SYMMETRIC_MODEL.replace('"mu": 1.0, "bandwidth": 1, "omega": 2', '"mu": 2.0, "bandwidth": 1, "omega": 2')

ZERO_RATE_MODEL = K1_MODEL.replace('"lambda": 1.0', '"lambda": 0.0')

ZERO_COST_MODEL = K1_MODEL.replace('"omega": 1', '"omega": 0')


def _write(tmp_path, text, name="model.json"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_stationary_reference(tmp_path):
    model = _write(tmp_path, K1_MODEL)
    out = tmp_path / "out"
    assert main(["stationary", "--model", model, "--out", str(out)]) == 0
    row = _read_csv(out / "summary.csv")[0]
    assert float(row["g"]) == pytest.approx(0.2, abs=1e-12)
    assert float(row["G"]) == pytest.approx(2.5, abs=1e-12)
    assert float(row["blocking_prob_1"]) == pytest.approx(0.2, abs=1e-12)
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["states"] == 3
    assert manifest["warnings"] == 0


def test_stationary_zero_rate_blocking_zero(tmp_path):
    model = _write(tmp_path, ZERO_RATE_MODEL)
    out = tmp_path / "out"
    assert main(["stationary", "--model", model, "--out", str(out)]) == 0
    row = _read_csv(out / "summary.csv")[0]
    assert float(row["blocking_prob_1"]) == 0.0


def test_malformed_model_is_validation_error(tmp_path, capsys):
    model = _write(tmp_path, K1_MODEL.replace('"mu": 1.0', '"mu": -1.0'))
    assert main(["stationary", "--model", model, "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "classes[0]" in err and "service rate" in err


def test_missing_model_file(tmp_path):
    assert main(["stationary", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_shadow_symmetric_method_rejects_asymmetric(tmp_path, capsys):
    model = _write(tmp_path, ASYMMETRIC_MODEL)
    code = main(["shadow", "--model", model, "--out", str(tmp_path / "o"), "--method", "symmetric"])
    assert code == 1
    assert "equal" in capsys.readouterr().err


def test_shadow_exact_equals_symmetric_closed_form(tmp_path):
    model = _write(tmp_path, SYMMETRIC_MODEL)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["shadow", "--model", model, "--out", str(out_a), "--method", "exact"]) == 0
    assert main(["shadow", "--model", model, "--out", str(out_b), "--method", "symmetric"]) == 0
    for name in ("relative_costs.csv", "shadow_prices.csv", "bill_dist.csv"):
        rows_a, rows_b = _read_csv(out_a / name), _read_csv(out_b / name)
        assert len(rows_a) == len(rows_b)
        for ra, rb in zip(rows_a, rows_b):
            for key in ra:
                try:
                    assert float(ra[key]) == pytest.approx(float(rb[key]), abs=1e-8)
                except ValueError:
                    assert ra[key] == rb[key]


def test_shadow_series_reports_residual_history(tmp_path):
    model = _write(tmp_path, ASYMMETRIC_MODEL)
    out = tmp_path / "o"
    code = main(["shadow", "--model", model, "--out", str(out), "--method", "series", "--terms", "4"])
    rows = _read_csv(out / "residuals.csv")
    assert [r["method"] for r in rows] == ["series"] * len(rows)
    assert [int(r["terms"]) for r in rows] == list(range(len(rows)))
    residuals = [float(r["residual"]) for r in rows]
    # either the completion converged cleanly or the run is flagged
    manifest = json.loads((out / "run_manifest.json").read_text())
    if residuals[-1] > 1e-6:
        assert code == 3 and manifest["warnings"] >= 1


def test_costdist_simple_matches_closed(tmp_path):
    # the closed scheme is the continuous-time law; the recursion approaches
    # it at rate 1/steps, so agreement at 1e-6 needs fine stepping
    model = _write(tmp_path, K1_MODEL)
    out_s, out_c = tmp_path / "s", tmp_path / "c"
    assert main(["costdist", "--model", model, "--out", str(out_s), "--t", "2.0",
                 "--scheme", "simple", "--rmax", "25", "--steps", "100000"]) == 0
    assert main(["costdist", "--model", model, "--out", str(out_c), "--t", "2.0",
                 "--scheme", "closed", "--rmax", "25"]) == 0
    rows_s = {r["r"]: float(r["probability"]) for r in _read_csv(out_s / "total_cost.csv")}
    rows_c = {r["r"]: float(r["probability"]) for r in _read_csv(out_c / "total_cost.csv")}
    for r in rows_c:
        assert rows_s[r] == pytest.approx(rows_c[r], abs=1e-6)


def test_costdist_zero_cost_point_mass(tmp_path):
    model = _write(tmp_path, ZERO_COST_MODEL)
    out = tmp_path / "o"
    assert main(["costdist", "--model", model, "--out", str(out), "--t", "3.0"]) == 0
    rows = _read_csv(out / "total_cost.csv")
    assert float(rows[0]["probability"]) == pytest.approx(1.0, abs=1e-12)
    assert all(float(r["probability"]) == 0.0 for r in rows[1:])


def test_costdist_mean_matches_analytic(tmp_path):
    model = _write(tmp_path, SYMMETRIC_MODEL)
    for scheme in ("simple", "closed"):
        out = tmp_path / scheme
        assert main(["costdist", "--model", model, "--out", str(out), "--t", "2.5",
                     "--scheme", scheme]) == 0
        risk = _read_csv(out / "risk.csv")[0]
        summary_out = tmp_path / "stat"
        main(["stationary", "--model", model, "--out", str(summary_out)])
        g = float(_read_csv(summary_out / "summary.csv")[0]["g"])
        assert float(risk["mean"]) == pytest.approx(2.5 * g, abs=1e-6)


def test_costdist_requires_t(tmp_path):
    model = _write(tmp_path, K1_MODEL)
    assert main(["costdist", "--model", model, "--out", str(tmp_path / "o"), "--scheme", "simple", "--t", "0"]) == 1


def test_simulate_deterministic_outputs(tmp_path):
    model = _write(tmp_path, K1_MODEL)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--model", model, "--t", "30.0", "--reps", "200", "--seed", "9"]
    assert main(args + ["--out", str(out_a)]) == 0
    assert main(args + ["--out", str(out_b)]) == 0
    for name in ("pi_mc.csv", "cost_dist_mc.csv", "total_cost_mc.csv", "risk_mc.csv",
                 "bill_dist_mc.csv", "comparison.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_simulate_reference_comparison_passes(tmp_path):
    model = _write(tmp_path, SYMMETRIC_MODEL)
    out = tmp_path / "o"
    assert main(["simulate", "--model", model, "--out", str(out), "--t", "60.0",
                 "--reps", "400", "--seed", "4"]) == 0
    rows = _read_csv(out / "comparison.csv")
    assert rows, "comparison report missing"
    assert all(r["pass"] == "1" for r in rows)


def test_simulate_rejects_zero_reps(tmp_path):
    model = _write(tmp_path, K1_MODEL)
    assert main(["simulate", "--model", model, "--out", str(tmp_path / "o"),
                 "--t", "10", "--reps", "0"]) == 1


def test_unknown_method_is_validation_error(tmp_path, capsys):
    model = _write(tmp_path, K1_MODEL)
    assert main(["shadow", "--model", model, "--out", str(tmp_path / "o"),
                 "--method", "unknown"]) == 1


def test_costdist_truncation_warning_exit(tmp_path):
    model = _write(tmp_path, K1_MODEL)
    out = tmp_path / "o"
    code = main(["costdist", "--model", model, "--out", str(out), "--t", "20.0",
                 "--scheme", "shadow", "--rmax", "2"])
    assert code == 3
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["warnings"] >= 1
