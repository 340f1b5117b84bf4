"""Feature grids, the parallel labelling sweep, train/test splits and CSV persistence."""
import math
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from models import DatasetMeta, FeatureRow, GridSpec, LabeledDataset, RowFailure, RunConfig
from provenance import sha256_file
from singularity import label_field
from validation import QuenchError, SchemaError, ValidationError


CSV_COLUMNS = ["theta", "phi", "h", "label"]
DEFAULT_H_VALUES = [0.25 * k for k in range(1, 9)]
MIN_SPLIT_ROWS = 10


def angle_grid(n_theta: int, n_phi: int, h: float) -> List[FeatureRow]:
    """theta over [0, 2pi] and phi over [0, pi], both endpoints included; theta outer."""
    if n_theta < 2 or n_phi < 2:
        raise ValidationError(f"angle_grid needs n_theta, n_phi >= 2, got {n_theta}, {n_phi}")
    thetas = np.linspace(0.0, 2.0 * math.pi, n_theta)
    phis = np.linspace(0.0, math.pi, n_phi)
    return [
        FeatureRow(theta=float(t), phi=float(p), h=float(h))
        for t in thetas
        for p in phis
    ]


def full_grid(
    h_values: Optional[Sequence[float]] = None,
    n_theta: int = 50,
    n_phi: int = 50,
) -> List[FeatureRow]:
    """Union of angle grids over several magnitudes (default 0.25J..2J in steps of 0.25J)."""
    h_values = list(DEFAULT_H_VALUES if h_values is None else h_values)
    if not h_values or any(not h > 0 for h in h_values):
        raise ValidationError("h_values must be non-empty and strictly positive")
    rows = []
    for h in h_values:
        rows.extend(angle_grid(n_theta, n_phi, h))
    return rows


def grid_rows(grid: GridSpec) -> List[FeatureRow]:
    if grid.h is not None:
        return angle_grid(grid.n_theta, grid.n_phi, grid.h)
    return full_grid(grid.h_values, grid.n_theta, grid.n_phi)


def _label_row(index: int, row: FeatureRow, run: RunConfig):
    try:
        report = label_field(run.system, row.field_vector, run.mode, run.extras)
        return index, report.label, None
    except (QuenchError, ArithmeticError, np.linalg.LinAlgError) as e:
        return index, None, RowFailure(index=index, error=type(e).__name__, message=str(e))


def generate_labels(
    rows: Sequence[FeatureRow],
    run: RunConfig,
    workers: int = 1,
) -> LabeledDataset:
    """
    Label every row with `label_field`.

    Failing rows stay unlabeled and are listed in `meta.failures`; the sweep
    never aborts on a single row.
    """
    results = Parallel(n_jobs=workers)(
        delayed(_label_row)(i, row, run) for i, row in enumerate(rows)
    )
    results.sort(key=lambda r: r[0])
    labeled, failures = [], []
    for index, label, failure in results:
        labeled.append(rows[index].model_copy(update={"label": label}))
        if failure is not None:
            failures.append(failure)
    meta = DatasetMeta(
        run=run,
        generation_seed=run.system.seed,
        created=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        failures=failures,
    )
    return LabeledDataset(rows=labeled, meta=meta)


def split_indices(n_rows: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded uniform permutation cut at round(train_fraction * n_rows)."""
    if n_rows < MIN_SPLIT_ROWS:
        raise ValidationError(f"split needs at least {MIN_SPLIT_ROWS} rows, got {n_rows}")
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(n_rows)
    n_train = min(max(int(round(train_fraction * n_rows)), 1), n_rows - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split(dataset: LabeledDataset, train_fraction: float, seed: int) -> Tuple[LabeledDataset, LabeledDataset]:
    train_idx, test_idx = split_indices(len(dataset), train_fraction, seed)
    return (
        LabeledDataset([dataset.rows[i] for i in train_idx], dataset.meta),
        LabeledDataset([dataset.rows[i] for i in test_idx], dataset.meta),
    )


def mirror_asymmetry(dataset: LabeledDataset) -> int:
    """Number of (theta, phi) pairs whose label differs from the one at (theta, pi - phi)."""
    groups = defaultdict(list)
    for row in dataset.rows:
        groups[(row.theta, row.h)].append(row)
    count = 0
    for members in groups.values():
        members.sort(key=lambda r: r.phi)
        for k in range(len(members) // 2):
            a, b = members[k], members[-1 - k]
            if a.label is not None and b.label is not None and a.label != b.label:
                count += 1
    return count


# Persistence

def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_csv(dataset: LabeledDataset, path) -> str:
    """Write theta,phi,h,label with 17 significant digits plus a JSON sidecar; returns the CSV sha256."""
    frame = pd.DataFrame({
        "theta": [r.theta for r in dataset.rows],
        "phi": [r.phi for r in dataset.rows],
        "h": [r.h for r in dataset.rows],
        "label": pd.array([r.label for r in dataset.rows], dtype="Int64"),
    }, columns=CSV_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    sidecar_path(path).write_text(dataset.meta.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return sha256_file(path)


def dataset_fingerprint(path) -> str:
    return sha256_file(path)


def _parse_cell(value: str, row: int, column: str, integer: bool = False):
    try:
        return int(value) if integer else float(value)
    except ValueError:
        raise SchemaError(f"row {row}, column '{column}': cannot parse {value!r}") from None


def read_csv(path) -> LabeledDataset:
    """
    Read a dataset written by `write_csv`.

    Raises:
        SchemaError: missing/extra columns, unparsable cells or out-of-range
            values (row and column reported), missing or invalid sidecar
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f"{path}: {e}") from e
    columns = list(frame.columns)
    if columns != CSV_COLUMNS:
        missing = [c for c in CSV_COLUMNS if c not in columns]
        raise SchemaError(f"{path}: expected columns {CSV_COLUMNS}, got {columns} (missing {missing})")

    rows = []
    for i, record in enumerate(frame.itertuples(index=False)):
        values = {c: _parse_cell(getattr(record, c), i, c) for c in ("theta", "phi", "h")}
        label = record.label.strip()
        values["label"] = _parse_cell(label, i, "label", integer=True) if label else None
        try:
            rows.append(FeatureRow(**values))
        except ValueError as e:
            raise SchemaError(f"row {i}: {e}") from e

    sidecar = sidecar_path(path)
    try:
        meta = DatasetMeta.model_validate_json(sidecar.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise SchemaError(f"{sidecar}: unreadable dataset metadata: {e}") from e
    return LabeledDataset(rows=rows, meta=meta)
