import json
import math
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

import invariants
from dataset import angle_grid, read_csv, write_csv
from main import main
from models import DatasetMeta, GridSpec, KernelSpec, LabeledDataset, RunConfig, SystemConfig
from pipeline import QuenchClassificationPipeline, load_run_config
from provenance import manifest_path, read_manifest, sha256_file


def _stderr_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def synthetic_dataset(tmp_path):
    """Labelled by hand (theta < pi is singular) so training never sees a single class."""
    run = RunConfig(system=SystemConfig(n_qubits=2, alpha=0.5), grid=GridSpec(h=0.8, n_theta=6, n_phi=5))
    rows = [r.model_copy(update={"label": 1 if r.theta < math.pi else -1}) for r in angle_grid(6, 5, 0.8)]
    path = tmp_path / "synthetic.csv"
    write_csv(LabeledDataset(rows=rows, meta=DatasetMeta(run=run)), path)
    return path


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps({
        "system": {"n_qubits": 2, "alpha": 0.5},
        "grid": {"h": 0.6, "n_theta": 3, "n_phi": 3},
    }))
    return path


def test_label_writes_dataset_and_manifest(tiny_config, tmp_path):
    out = tmp_path / "labels.csv"
    assert main(["--quiet", "label", "--config", str(tiny_config), "--out", str(out)]) == 0
    dataset = read_csv(out)
    assert len(dataset) == 9
    assert all(r.label in (1, -1) for r in dataset.rows)
    manifest = read_manifest(out)
    assert manifest.command == "label"
    assert manifest.outputs[str(out)] == sha256_file(out)
    assert manifest.summary["rows"] == 9


def test_label_output_does_not_depend_on_workers(tiny_config, tmp_path):
    one, two = tmp_path / "one.csv", tmp_path / "two.csv"
    assert main(["--quiet", "--workers", "1", "label", "--config", str(tiny_config), "--out", str(one)]) == 0
    assert main(["--quiet", "--workers", "2", "label", "--config", str(tiny_config), "--out", str(two)]) == 0
    assert sha256_file(one) == sha256_file(two)


def test_invalid_config_exits_with_schema_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"system": {"n_qubits": 1, "alpha": 0.5}}))
    assert main(["--quiet", "label", "--config", str(bad), "--out", str(tmp_path / "x.csv")]) == 1
    error = _stderr_error(capsys)
    assert error["error"] == "SchemaError" and error["exit_code"] == 1


def test_config_accepts_paper_literal_convention(tmp_path):
    path = tmp_path / "literal.json"
    path.write_text(json.dumps({
        "system": {"n_qubits": 2, "alpha": 0.5, "ground_convention": "paper-literal"},
        "grid": {"h": 0.6, "n_theta": 3, "n_phi": 3},
    }))
    run = load_run_config(path)
    assert run.system.ground_convention == "y-polarized"


def test_gram_cache_is_reused(synthetic_dataset, tmp_path):
    out = tmp_path / "gram.bin"
    pipeline = QuenchClassificationPipeline(workers=1)
    first = pipeline.gram(synthetic_dataset, KernelSpec.default_for("GSK"), out)
    assert manifest_path(out).exists()
    second = pipeline.gram(synthetic_dataset, first.spec, out)
    assert pipeline.hooks.cache_hits == [str(out)]
    np.testing.assert_array_equal(first.base, second.base)
    pipeline.gram(synthetic_dataset, first.spec, out, force=True)
    assert len(pipeline.hooks.cache_hits) == 1


def test_gram_cache_without_matching_manifest_is_rebuilt(synthetic_dataset, tmp_path):
    out = tmp_path / "gram.bin"
    pipeline = QuenchClassificationPipeline(workers=1)
    first = pipeline.gram(synthetic_dataset, KernelSpec.default_for("GSK"), out)
    manifest_path(out).unlink()
    pipeline.gram(synthetic_dataset, first.spec, out)
    assert pipeline.hooks.cache_hits == []
    assert read_manifest(out).outputs[str(out)] == sha256_file(out)


def test_corrupted_gram_cache_exits_1(synthetic_dataset, tmp_path, capsys):
    out = tmp_path / "gram.bin"
    out.write_bytes(b"garbage\n\x00\x01")
    assert main(["--quiet", "gram", "--dataset", str(synthetic_dataset), "--out", str(out)]) == 1
    assert _stderr_error(capsys)["error"] == "SchemaError"


def test_train_and_eval(synthetic_dataset, tmp_path):
    gram, model, metrics = tmp_path / "gram.bin", tmp_path / "model.json", tmp_path / "metrics.json"
    assert main(["--quiet", "gram", "--dataset", str(synthetic_dataset), "--out", str(gram)]) == 0
    assert main(["--quiet", "train", "--dataset", str(synthetic_dataset), "--gram", str(gram),
                 "--out", str(model)]) == 0
    assert main(["--quiet", "eval", "--dataset", str(synthetic_dataset), "--gram", str(gram),
                 "--model", str(model), "--out", str(metrics)]) == 0
    result = json.loads(metrics.read_text())
    assert 0.0 <= result["accuracy"] <= 1.0
    assert result["n_train"] == 21 and result["n_test"] == 9
    assert sum(result["confusion"].values()) == 9
    assert result["kernel"]["method"] == "GSK"
    assert read_manifest(metrics).command == "eval"


def test_train_with_tuning(synthetic_dataset, tmp_path):
    gram, model = tmp_path / "gram.bin", tmp_path / "model.json"
    assert main(["--quiet", "gram", "--dataset", str(synthetic_dataset), "--out", str(gram),
                 "--method", "classical_rbf"]) == 0
    pipeline = QuenchClassificationPipeline(workers=1, enable_hooks=False)
    trained = pipeline.train(synthetic_dataset, gram, model, tune=True)
    assert trained.spec.method == "classical_rbf"
    assert trained.train_config.C in (0.1, 1.0, 10.0, 100.0)


def test_gram_from_another_dataset_is_rejected(synthetic_dataset, tmp_path, capsys):
    gram, model = tmp_path / "gram.bin", tmp_path / "model.json"
    assert main(["--quiet", "gram", "--dataset", str(synthetic_dataset), "--out", str(gram)]) == 0
    dataset = read_csv(synthetic_dataset)
    flipped = [r.model_copy(update={"label": -r.label}) for r in dataset.rows]
    other = tmp_path / "other.csv"
    write_csv(LabeledDataset(rows=flipped, meta=dataset.meta), other)
    assert main(["--quiet", "train", "--dataset", str(other), "--gram", str(gram), "--out", str(model)]) == 1
    assert _stderr_error(capsys)["error"] == "FingerprintMismatch"


def test_sweep_argument_errors(small_run_config, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert main(["--quiet", "sweep", "--config", str(small_run_config), "--out", str(out), "--n"]) == 1
    assert main(["--quiet", "sweep", "--config", str(small_run_config), "--out", str(out), "--n", "7"]) == 3
    assert _stderr_error(capsys)["error"] == "ResourceRefusal"
    assert main(["--quiet", "sweep", "--config", str(small_run_config), "--out", str(out),
                 "--noise-rates", "0.01"]) == 1
    assert not out.exists()


def test_sweep_records_every_cell(tmp_path):
    config = tmp_path / "sweep.json"
    config.write_text(json.dumps({
        "system": {"n_qubits": 2, "alpha": 0.5},
        "grid": {"h": 0.6, "n_theta": 4, "n_phi": 4},
    }))
    out = tmp_path / "sweep.csv"
    assert main(["--quiet", "sweep", "--config", str(config), "--out", str(out),
                 "--methods", "GSK", "classical_rbf"]) == 0
    frame = pd.read_csv(out)
    assert list(frame["method"]) == ["GSK", "classical_rbf"]
    assert set(frame["status"]) <= {"ok", "failed"}
    assert (frame["n_qubits"] == 2).all()


def test_export_sphere_and_contour(synthetic_dataset, tmp_path):
    sphere, contour = tmp_path / "sphere.csv", tmp_path / "contour.csv"
    assert main(["--quiet", "export", "--kind", "sphere", "--dataset", str(synthetic_dataset),
                 "--out", str(sphere)]) == 0
    frame = pd.read_csv(sphere)
    np.testing.assert_allclose(np.linalg.norm(frame[["x", "y", "z"]].to_numpy(), axis=1), 0.8)
    assert main(["--quiet", "export", "--kind", "contour", "--dataset", str(synthetic_dataset),
                 "--out", str(contour)]) == 0
    assert len(pd.read_csv(contour)) == 30


def test_export_traces(small_run_config, tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["--quiet", "export", "--kind", "traces", "--config", str(small_run_config),
                 "--theta", "1.5", "--phi", "0.5", "--out", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t", "P_plus", "P_minus", "lambda", "m_x"]
    assert frame["m_x"].iloc[0] == pytest.approx(-1.0)


def test_unknown_export_kind_exits_1(synthetic_dataset, tmp_path, capsys):
    assert main(["--quiet", "export", "--kind", "histogram", "--dataset", str(synthetic_dataset),
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert _stderr_error(capsys)["error"] == "ValidationError"


def test_verify_reports_injected_fault(monkeypatch, tmp_path):
    monkeypatch.setattr(invariants, "CHECKS", [
        ("hamiltonian_hermitian", invariants.check_hamiltonian_hermitian, False),
        ("mixed_pure_consistency", invariants.check_mixed_pure_consistency, False),
    ])
    report = tmp_path / "verify.json"
    assert main(["--quiet", "verify", "--out", str(report)]) == 0
    assert json.loads(report.read_text())["passed"] is True

    broken = SimpleNamespace(matrix=np.array([[0.0, 1.0], [0.0, 0.0]]))
    monkeypatch.setattr(invariants, "build_hamiltonian", lambda config, field: broken)
    assert main(["--quiet", "verify", "--out", str(report)]) == 2
    checks = {c["name"]: c for c in json.loads(report.read_text())["checks"]}
    assert checks["hamiltonian_hermitian"]["passed"] is False
    assert "InvariantViolation" in checks["hamiltonian_hermitian"]["detail"]


def test_run_checks_subset():
    results = invariants.run_checks(names=["mixed_pure_consistency", "smo_oracle"])
    assert [r.name for r in results] == ["mixed_pure_consistency", "smo_oracle"]
    assert all(r.passed for r in results)


def test_workers_default_comes_from_environment(monkeypatch):
    monkeypatch.setenv("QUENCH_WORKERS", "2")
    assert QuenchClassificationPipeline(enable_hooks=False).workers == 2
    assert QuenchClassificationPipeline(workers=1, enable_hooks=False).workers == 1
