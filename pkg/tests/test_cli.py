import csv
import json

import numpy as np
import pytest

from mixhmm import io
from mixhmm.cli import main
from mixhmm.likelihood import SubjectRecord
from mixhmm.model import ConstraintSet, FixRatio, FixValue, nun_study_model
from mixhmm.presets import nun_reference_estimates, sim_study_design, sim_study_truth
from mixhmm.simulate import simulate_dataset


def run(args):
    return main([str(a) for a in args])


def test_simulate_preset_is_deterministic(tmp_path):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    assert run(["simulate", "--preset", "nun-sim", "--n", 200, "--seed", 5, "--out", out1]) == 0
    assert run(["simulate", "--preset", "nun-sim", "--n", 200, "--seed", 5, "--out", out2]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    meta = json.loads((tmp_path / "a.csv.meta.json").read_text())
    assert meta["command"] == "simulate"
    assert meta["resolved"]["seed"] == 5


def test_simulate_rejects_zero_subjects_before_writing(tmp_path):
    out = tmp_path / "x.csv"
    assert run(["simulate", "--preset", "nun-sim", "--n", 0, "--out", out]) == 2
    assert not out.exists()


def test_dataset_roundtrip(tmp_path):
    model = nun_study_model()
    records = simulate_dataset(model, sim_study_truth(), 150, sim_study_design(seed=8))
    path = tmp_path / "data.csv"
    io.write_dataset(records, path)
    back = io.read_dataset(path, model)
    assert back == records


def test_dataset_roundtrip_preserves_sparse_aux(tmp_path):
    model = nun_study_model()
    records = [
        SubjectRecord(0.0, (0.0, 0.5), (1, 1)),
        SubjectRecord(0.0, (0.0, 0.5), (1, 2), 0.9, 3, aux=(None, (1, 4))),
        SubjectRecord(0.2, (0.2, 0.5), (1, 1), 0.7, 3, aux=((), (2, 3, 5, 6))),
    ]
    path = tmp_path / "aux.csv"
    io.write_dataset(records, path)
    assert io.read_dataset(path, model) == records


def test_model_spec_roundtrip(tmp_path):
    model = nun_study_model()
    constraints = ConstraintSet((FixValue("pi2.2", 0.0), FixRatio("lambda1.2.4", "lambda1.1.3", 1.5)))
    data = io.model_to_dict(model, constraints)
    back_model, back_constraints = io.model_from_dict(data)
    assert back_model == model
    assert back_constraints == constraints
    params = sim_study_truth()
    back_params = io.params_from_dict(io.params_to_dict(params))
    assert np.array_equal(back_params.psi, params.psi)
    assert back_params.rates == params.rates


def test_fit_mle_cli(tmp_path):
    data_path = tmp_path / "data.csv"
    run(["simulate", "--preset", "nun-sim", "--n", 120, "--seed", 3, "--out", data_path])
    out = tmp_path / "fit.json"
    code = run(
        [
            "fit", "--data", data_path, "--mode", "mle", "--out", out,
            "--fix", "pi2.2=0", "--starts", 1, "--seed", 1,
        ]
    )
    assert code in (0, 3, 4)
    result = json.loads(out.read_text())
    assert result["kind"] == "mle"
    assert "pi2.2" not in result["free_names"]
    assert result["params"]["components"][1]["pi"][1] == 0.0
    assert np.isfinite(result["loglik"])


def test_fit_missing_data_file_is_input_error(tmp_path):
    out = tmp_path / "fit.json"
    assert run(["fit", "--data", tmp_path / "nope.csv", "--out", out]) == 2
    assert not out.exists()


def test_fit_bayes_cli_writes_draws(tmp_path):
    data_path = tmp_path / "data.csv"
    run(["simulate", "--preset", "nun-sim", "--n", 60, "--seed", 4, "--out", data_path])
    out = tmp_path / "bayes.json"
    code = run(
        [
            "fit", "--data", data_path, "--mode", "bayes", "--out", out,
            "--chains", 2, "--iterations", 300, "--seed", 2, "--threads", 1,
            "--prior-preset", "adams", "--fix", "pi2.2=0",
        ]
    )
    assert code in (0, 3)
    draws_path = tmp_path / "bayes.json.draws.csv"
    with open(draws_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    assert header[:2] == ["chain", "iteration"]
    assert "lambda2.3.6" in header
    assert len(rows) == 2 * 150
    result = json.loads(out.read_text())
    assert result["kind"] == "bayes"
    assert "psi.2" in result["parameters"]


def test_predict_cli(tmp_path):
    out = tmp_path / "curve.csv"
    code = run(
        [
            "predict", "--params-preset", "nun-ref", "--ages", "75:100:1",
            "--out", out, "--cuminc", "1:2|4", "--cuminc", "2:3|6",
        ]
    )
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 26
    assert rows[0]["age"] == "75.0"
    for row in rows:
        total = float(row["type_1"]) + float(row["type_2"])
        assert float(row["all_cause"]) == pytest.approx(total, abs=1e-12)
    cuminc1 = [float(r["cuminc_type_1"]) for r in rows]
    assert np.all(np.diff(cuminc1) >= 0)
    derived = json.loads((tmp_path / "curve.csv.derived.json").read_text())
    assert round(derived["progression_years"]["type2_pathology_onset"], 3) == 6.536
    assert round(derived["mortality_rate_ratio"]["type1"], 3) == 4.284


def test_predict_rejects_bad_grid(tmp_path):
    out = tmp_path / "curve.csv"
    assert run(["predict", "--params-preset", "nun-ref", "--ages", "80:75:1", "--out", out]) == 2


def test_check_transform_detects_invariance(tmp_path):
    out = tmp_path / "report.json"
    code = run(
        [
            "check", "--mode", "transform", "--params-preset", "sim-truth",
            "--rho1", 0.9, "--rho2", 0.9, "--synthesize", 40, "--out", out,
        ]
    )
    assert code == 4  # identifiability guard: the transform is undetectable
    report = json.loads(out.read_text())
    assert report["verdict"] == "invariant"
    assert report["max_abs_loglik_gap"] <= 1e-8


def test_check_transform_rho_out_of_range_is_input_error(tmp_path):
    out = tmp_path / "report.json"
    code = run(
        [
            "check", "--mode", "transform", "--params-preset", "sim-truth",
            "--rho1", 5.0, "--rho2", 0.9, "--out", out,
        ]
    )
    assert code == 2


def test_check_unknown_mode_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["check", "--mode", "everything", "--out", tmp_path / "x.json"])
    assert exc.value.code == 2


def test_config_file_resolution(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"n": 7, "seed": 11}))
    out = tmp_path / "sim.csv"
    assert run(["simulate", "--preset", "nun-sim", "--config", config, "--out", out]) == 0
    meta = json.loads((tmp_path / "sim.csv.meta.json").read_text())
    assert meta["resolved"]["n"] == 7 and meta["resolved"]["seed"] == 11
    # flags override the config file
    assert run(["simulate", "--preset", "nun-sim", "--config", config, "--n", 9, "--out", out]) == 0
    meta = json.loads((tmp_path / "sim.csv.meta.json").read_text())
    assert meta["resolved"]["n"] == 9
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus_option": 1}))
    assert run(["simulate", "--preset", "nun-sim", "--config", bad, "--out", out]) == 2


def test_flatness_cli(tmp_path):
    data_path = tmp_path / "data.csv"
    run(["simulate", "--preset", "nun-sim", "--n", 80, "--seed", 6, "--out", data_path])
    fit_path = tmp_path / "fit.json"
    run(
        [
            "fit", "--data", data_path, "--mode", "mle", "--out", fit_path,
            "--fix-ratio", "pi2.2/pi2.1=0.75", "--starts", 1, "--seed", 1,
        ]
    )
    out = tmp_path / "scan.csv"
    code = run(
        [
            "check", "--mode", "flatness", "--fit", fit_path, "--data", data_path,
            "--direction", "lambda1.2.4", "--half-width", 0.4, "--points", 5, "--out", out,
        ]
    )
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    summary = json.loads((tmp_path / "scan.csv.summary.json").read_text())
    assert "drop_plus" in summary


def test_scenarios_cli_smoke(tmp_path):
    out = tmp_path / "table.csv"
    code = run(
        [
            "check", "--mode", "scenarios", "--scenarios", "S1", "--n", 50,
            "--reps", 1, "--seed", 0, "--threads", 1, "--starts", 1, "--out", out,
        ]
    )
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    names = [r["parameter"] for r in rows]
    assert "lambda2.1.2" in names and "psi.1" in names
    header = rows[0].keys()
    assert "S1_est" in header and "S1_se" in header