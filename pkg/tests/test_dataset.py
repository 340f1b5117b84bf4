import math

import numpy as np
import pytest

import dataset
from dataset import (
    angle_grid,
    full_grid,
    generate_labels,
    grid_rows,
    mirror_asymmetry,
    read_csv,
    sidecar_path,
    split,
    split_indices,
    write_csv,
)
from models import DatasetMeta, FeatureRow, GridSpec, LabeledDataset, RunConfig, SystemConfig
from provenance import sha256_file
from validation import EigensolverFailure, SchemaError, ValidationError


@pytest.fixture
def run_n2():
    return RunConfig(system=SystemConfig(n_qubits=2, alpha=0.5), grid=GridSpec(h=0.6, n_theta=4, n_phi=3))


def _dataset(rows, run):
    return LabeledDataset(rows=rows, meta=DatasetMeta(run=run))


def test_angle_grid_covers_both_endpoints():
    rows = angle_grid(5, 3, 1.0)
    assert len(rows) == 15
    assert rows[0].theta == 0.0 and rows[0].phi == 0.0
    assert rows[-1].theta == pytest.approx(2 * math.pi)
    assert rows[-1].phi == pytest.approx(math.pi)
    # theta is the outer loop
    assert [r.phi for r in rows[:3]] == pytest.approx([0.0, math.pi / 2, math.pi])
    with pytest.raises(ValidationError):
        angle_grid(1, 3, 1.0)


def test_full_grid_defaults_to_eight_magnitudes():
    rows = full_grid(n_theta=3, n_phi=2)
    assert len(rows) == 8 * 6
    assert sorted({r.h for r in rows}) == pytest.approx([0.25 * k for k in range(1, 9)])
    with pytest.raises(ValidationError):
        full_grid([0.5, 0.0])


def test_grid_rows_follows_grid_spec():
    assert len(grid_rows(GridSpec(h=1.0, n_theta=4, n_phi=4))) == 16
    assert len(grid_rows(GridSpec(h_values=[0.5, 1.0], n_theta=2, n_phi=3))) == 12


def test_zero_field_rows_are_all_regular(run_n2):
    labeled = generate_labels(angle_grid(3, 3, 0.0), run_n2)
    assert [r.label for r in labeled.rows] == [-1] * 9
    assert labeled.meta.failures == []


def test_labels_do_not_depend_on_worker_count(run_n2):
    rows = angle_grid(2, 3, 0.6)
    one = generate_labels(rows, run_n2, workers=1)
    two = generate_labels(rows, run_n2, workers=2)
    assert [r.label for r in one.rows] == [r.label for r in two.rows]
    assert [r.key for r in one.rows] == [r.key for r in rows]


def test_failing_row_is_recorded_not_fatal(run_n2, monkeypatch):
    real = dataset.label_field

    def flaky(config, field, mode, extras):
        if field.theta == 0.0 and field.phi == 0.0:
            raise EigensolverFailure("eigh did not converge")
        return real(config, field, mode, extras)

    monkeypatch.setattr(dataset, "label_field", flaky)
    labeled = generate_labels(angle_grid(2, 2, 0.0), run_n2, workers=1)
    assert labeled.rows[0].label is None
    assert all(r.label == -1 for r in labeled.rows[1:])
    assert len(labeled.meta.failures) == 1
    failure = labeled.meta.failures[0]
    assert failure.index == 0 and failure.error == "EigensolverFailure"
    assert labeled.labeled_indices() == [1, 2, 3]


def test_split_sizes_and_determinism():
    train, test = split_indices(10_000, 0.7, seed=3)
    assert train.size == 7000 and test.size == 3000
    assert np.intersect1d(train, test).size == 0
    assert np.array_equal(np.union1d(train, test), np.arange(10_000))
    again, _ = split_indices(10_000, 0.7, seed=3)
    np.testing.assert_array_equal(train, again)
    other, _ = split_indices(10_000, 0.7, seed=4)
    assert not np.array_equal(train, other)


def test_split_rejects_small_or_bad_inputs():
    with pytest.raises(ValidationError):
        split_indices(9, 0.7, 0)
    with pytest.raises(ValidationError):
        split_indices(100, 1.0, 0)


def test_split_dataset(run_n2):
    rows = [FeatureRow(theta=0.1 * k, phi=0.0, h=1.0, label=1 if k % 2 else -1) for k in range(20)]
    train, test = split(_dataset(rows, run_n2), 0.7, seed=0)
    assert len(train) == 14 and len(test) == 6
    assert {r.key for r in train.rows}.isdisjoint({r.key for r in test.rows})


def test_csv_round_trip_is_exact(tmp_path, run_n2):
    rows = [
        FeatureRow(theta=math.pi / 3, phi=0.1, h=0.6, label=1),
        FeatureRow(theta=2 * math.pi, phi=math.pi, h=0.6, label=None),
        FeatureRow(theta=0.0, phi=1e-17, h=0.6, label=-1),
    ]
    path = tmp_path / "data.csv"
    digest = write_csv(_dataset(rows, run_n2), path)
    assert digest == sha256_file(path)
    assert path.read_text().splitlines()[0] == "theta,phi,h,label"
    assert sidecar_path(path).exists()
    loaded = read_csv(path)
    assert [r.key for r in loaded.rows] == [r.key for r in rows]
    assert [r.label for r in loaded.rows] == [1, None, -1]
    assert loaded.meta.run == run_n2


def test_csv_schema_errors(tmp_path, run_n2):
    path = tmp_path / "data.csv"
    write_csv(_dataset([FeatureRow(theta=0.5, phi=0.5, h=1.0, label=1)], run_n2), path)
    meta = sidecar_path(path).read_text()

    def rewrite(text):
        path.write_text(text)
        sidecar_path(path).write_text(meta)

    rewrite("theta,phi,label\n0.5,0.5,1\n")
    with pytest.raises(SchemaError, match="missing"):
        read_csv(path)

    rewrite("theta,phi,h,label\n0.5,0.5,1.0,1\n0.5,4.0,1.0,1\n")
    with pytest.raises(SchemaError, match="row 1"):
        read_csv(path)

    rewrite("theta,phi,h,label\n0.5,abc,1.0,1\n")
    with pytest.raises(SchemaError, match="phi"):
        read_csv(path)

    rewrite("theta,phi,h,label\n0.5,0.5,1.0,2\n")
    with pytest.raises(SchemaError):
        read_csv(path)

    rewrite("theta,phi,h,label\n0.5,0.5,1.0,1\n")
    sidecar_path(path).unlink()
    with pytest.raises(SchemaError):
        read_csv(path)


def test_mirror_asymmetry(run_n2):
    rows = [
        FeatureRow(theta=0.0, phi=0.0, h=1.0, label=1),
        FeatureRow(theta=0.0, phi=math.pi / 2, h=1.0, label=-1),
        FeatureRow(theta=0.0, phi=math.pi, h=1.0, label=1),
        FeatureRow(theta=1.0, phi=0.0, h=1.0, label=1),
        FeatureRow(theta=1.0, phi=math.pi, h=1.0, label=-1),
    ]
    assert mirror_asymmetry(_dataset(rows, run_n2)) == 1
