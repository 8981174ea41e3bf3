import json
import os

import numpy as np
import pytest

from evidest import cli, lifestage


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory, insect_demo):
    """Datasets for two valid masks + one invalid (skip) mask."""
    out = tmp_path_factory.mktemp("sim")
    code = run([
        "simulate", "--mask", "111010", "--mask", "001001", "--mask", "000000",
        "--seed", "11", "--out", str(out),
    ])
    assert code == cli.EXIT_OK
    return out


def test_simulate_outputs_and_skip_report(sim_dir):
    names = sorted(os.listdir(sim_dir))
    assert any(n.startswith("dataset_mask23_111010") and n.endswith(".json") for n in names)
    assert any(n.endswith(".csv") for n in names)
    skip = json.loads((sim_dir / "skip_report.json").read_text())
    assert skip["skipped"][0]["mask"] == "000000"
    manifest = json.loads((sim_dir / "manifest_simulate.json").read_text())
    assert manifest["schema_version"] == 1
    assert manifest["config_hash"]


def test_simulate_deterministic_bytes(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        code = run(["simulate", "--mask", "001001", "--seed", "11", "--out", str(out)])
        assert code == cli.EXIT_OK
    a = (out1 / "dataset_mask36_001001.json").read_bytes()
    b = (out2 / "dataset_mask36_001001.json").read_bytes()
    assert a == b


def test_simulate_matches_library_call(sim_dir, insect_demo):
    mask, data = insect_demo
    payload = json.loads((sim_dir / "dataset_mask23_111010.json").read_text())
    loaded = lifestage.InsectDataset.from_json_dict(payload)
    np.testing.assert_array_equal(loaded.observations, data.observations)


def test_simulate_usage_error(tmp_path):
    assert run(["simulate", "--seed", "1", "--out", str(tmp_path)]) == cli.EXIT_USAGE


FAST_BUDGET = [
    "--n-is", "2000", "--amis-start", "200", "--amis-stages", "4",
    "--bridge-nq", "2000", "--bridge-fit", "1000",
    "--nuts-warmup", "150", "--nuts-keep", "500",
    "--pathfinder-runs", "6", "--pathfinder-max-iters", "40",
]


@pytest.fixture(scope="module")
def coral_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("coral_run")
    code = run([
        "evidence", "--family", "coral", "--models", "logistic,richards",
        "--methods", "bic,laplace,laplace-is,robust-amis,bridge",
        "--seed", "3", "--repeats", "2", "--out", str(out), "--save-samples", "500",
        *FAST_BUDGET,
    ])
    assert code == cli.EXIT_OK
    return out


def test_evidence_writes_one_file_per_model_method_rep(coral_run):
    names = [n for n in os.listdir(coral_run) if n.startswith("est_")]
    assert len(names) == 2 * 5 * 2  # models x methods x repeats
    payload = json.loads((coral_run / "est_richards_laplace-is_r0.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["method"] == "laplace-is"
    assert payload["seed"] is not None and payload["config_hash"]
    assert payload["n_total"] == 2000
    # identifiability proxy is computed where the weighted ESS allows it
    well_identified = json.loads((coral_run / "est_logistic_laplace-is_r0.json").read_text())
    assert well_identified.get("max_sd_ratio") is not None


def test_evidence_rerun_reproduces_numeric_fields(coral_run, tmp_path):
    code = run([
        "evidence", "--family", "coral", "--models", "logistic",
        "--methods", "laplace-is", "--seed", "3", "--repeats", "1",
        "--out", str(tmp_path), *FAST_BUDGET,
    ])
    assert code == cli.EXIT_OK
    fresh = json.loads((tmp_path / "est_logistic_laplace-is_r0.json").read_text())
    old = json.loads((coral_run / "est_logistic_laplace-is_r0.json").read_text())
    # wall_time_s is timing noise; everything numeric must match exactly.
    for key in ("log_z", "ess", "pareto_k", "n_total", "n_stages", "seed"):
        assert fresh[key] == old[key], key


def test_evidence_bic_needs_no_sampling_budget(tmp_path):
    code = run([
        "evidence", "--family", "coral", "--models", "gompertz", "--methods", "bic",
        "--seed", "5", "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_OK
    payload = json.loads((tmp_path / "est_gompertz_bic_r0.json").read_text())
    assert payload["n_total"] == 0


def test_evidence_unknown_method_usage_error(tmp_path):
    code = run([
        "evidence", "--family", "coral", "--methods", "nonsense",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_USAGE


def test_evidence_insect_requires_dataset(tmp_path):
    code = run([
        "evidence", "--family", "insect", "--methods", "bic",
        "--seed", "1", "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_DATA


def test_select_outputs(coral_run, tmp_path):
    code = run([
        "select", "--estimates", str(coral_run), "--method", "laplace-is",
        "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_OK
    post = json.loads((tmp_path / "model_posterior_laplace-is.json").read_text())
    assert sorted(post["labels"]) == ["logistic", "richards"]
    assert sum(post["probabilities"]) == pytest.approx(1.0, abs=1e-9)
    ranked = (tmp_path / "ranked_laplace-is.csv").read_text().splitlines()
    assert ranked[0] == "rank,model,log_evidence,probability"
    assert len(ranked) == 3


def test_select_missing_method_is_data_error(coral_run, tmp_path):
    code = run([
        "select", "--estimates", str(coral_run), "--method", "standard-amis",
        "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_DATA


def test_select_uniform_evidences_uniform_posterior(tmp_path):
    est_dir = tmp_path / "est"
    est_dir.mkdir()
    for model in ("a", "b", "c"):
        (est_dir / f"est_{model}_bic_r0.json").write_text(json.dumps({
            "schema_version": 1, "method": "bic", "model": model,
            "model_label": model, "log_z": -4.2, "ess": None, "pareto_k": None,
            "n_total": 0, "n_stages": [], "seed": 0, "wall_time_s": 0.0,
            "flags": [], "repeat": 0,
        }))
    out = tmp_path / "out"
    assert run(["select", "--estimates", str(est_dir), "--method", "bic",
                "--out", str(out)]) == cli.EXIT_OK
    post = json.loads((out / "model_posterior_bic.json").read_text())
    np.testing.assert_allclose(post["probabilities"], 1.0 / 3.0)


def test_select_insect_inclusion_table(sim_dir, tmp_path):
    est_dir = tmp_path / "est"
    est_dir.mkdir()
    rng = np.random.default_rng(0)
    for idx in (23, 40, 63):
        label = lifestage.MechanismMask.from_index(idx).label()
        (est_dir / f"est_{label}_bic_r0.json").write_text(json.dumps({
            "schema_version": 1, "method": "bic", "model": label,
            "model_label": label, "log_z": float(rng.standard_normal()),
            "ess": None, "pareto_k": None, "n_total": 0, "n_stages": [],
            "seed": 0, "wall_time_s": 0.0, "flags": [], "repeat": 0,
        }))
    out = tmp_path / "out"
    assert run(["select", "--estimates", str(est_dir), "--method", "bic",
                "--out", str(out)]) == cli.EXIT_OK
    rows = (out / "inclusion_bic.csv").read_text().splitlines()
    assert rows[0] == "mechanism,probability"
    assert len(rows) == 7  # six mechanisms


def test_compare_tables(coral_run, tmp_path):
    code = run(["compare", "--estimates", str(coral_run), "--gold", "bridge",
                "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    bias = (tmp_path / "bias_table.csv").read_text().splitlines()
    assert bias[0] == "method,model,mean_err,sd_err,n_runs,flags"
    rows = [r.split(",") for r in bias[1:]]
    gold_rows = [r for r in rows if r[0] == "bridge"]
    # gold vs itself: zero mean error by construction
    for r in gold_rows:
        assert abs(float(r[2])) < 1e-9
    tvd_rows = (tmp_path / "tvd_table.csv").read_text().splitlines()
    assert tvd_rows[0] == "method,repeat,tvd_vs_gold"
    assert len(tvd_rows) > 1
    ess_rows = (tmp_path / "ess_table.csv").read_text().splitlines()
    assert ess_rows[0] == "method,model,median_ess"
    scatter = (tmp_path / "error_vs_identifiability.csv").read_text().splitlines()
    assert scatter[0] == "method,model,repeat,logz_err,max_sd_ratio"


def test_compare_single_run_omits_sd(tmp_path):
    est_dir = tmp_path / "est"
    est_dir.mkdir()
    for method in ("bridge", "bic"):
        (est_dir / f"est_m_{method}_r0.json").write_text(json.dumps({
            "schema_version": 1, "method": method, "model": "m", "model_label": "m",
            "log_z": -1.0, "ess": None, "pareto_k": None, "n_total": 0,
            "n_stages": [], "seed": 0, "wall_time_s": 0.0, "flags": [], "repeat": 0,
        }))
    out = tmp_path / "out"
    assert run(["compare", "--estimates", str(est_dir), "--out", str(out)]) == cli.EXIT_OK
    rows = (out / "bias_table.csv").read_text().splitlines()[1:]
    for row in rows:
        parts = row.split(",")
        assert parts[3] == "" and parts[5] == "sd_omitted_single_run"


def test_report_summary(coral_run, capsys):
    assert run(["report", "--dir", str(coral_run)]) == cli.EXIT_OK
    text = (coral_run / "report.txt").read_text()
    assert "estimates: 20" in text


def test_jobs_do_not_change_results(tmp_path):
    out1 = tmp_path / "serial"
    out2 = tmp_path / "parallel"
    args = ["evidence", "--family", "coral", "--models", "logistic,gompertz",
            "--methods", "bic,laplace", "--seed", "9"]
    assert run([*args, "--out", str(out1)]) == cli.EXIT_OK
    assert run([*args, "--jobs", "2", "--out", str(out2)]) == cli.EXIT_OK
    for name in sorted(os.listdir(out1)):
        if not name.startswith("est_"):
            continue
        a = json.loads((out1 / name).read_text())
        b = json.loads((out2 / name).read_text())
        assert a["log_z"] == b["log_z"], name


def test_insect_evidence_smoke(sim_dir, tmp_path):
    ds = sim_dir / "dataset_mask36_001001.json"
    code = run([
        "evidence", "--family", "insect", "--dataset", str(ds),
        "--models", "001001", "--methods", "bic,laplace",
        "--seed", "2", "--out", str(tmp_path),
    ])
    assert code == cli.EXIT_OK
    payload = json.loads((tmp_path / "est_001001_bic_r0.json").read_text())
    assert payload["log_z"] is not None
