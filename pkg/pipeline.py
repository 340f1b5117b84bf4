"""Orchestration of labelling, Gram construction, training, evaluation, sweeps and exports."""
import json
import math
import os
import time
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from dataset import generate_labels, grid_rows, read_csv, split_indices, write_csv
from dynamics import write_trace_csv
from hooks import PipelineHooks
from invariants import run_checks
from kernels import (
    apply_map,
    build_gram,
    feature_matrix,
    initial_overlap_map,
    kernel_states,
    load_gram,
    read_gram_header,
    save_gram,
)
from models import (
    FieldVector,
    GramMatrix,
    KernelSpec,
    LabeledDataset,
    RunConfig,
    RunManifest,
    SvmModel,
    SystemConfig,
)
from provenance import TOOL_VERSION, manifest_path, read_manifest, sha256_file, write_manifest
from singularity import trace_table
from svm import accuracy, confusion, cross_validate, load_model, save_model, train
from validation import (
    FingerprintMismatch,
    NearDegeneracy,
    NonConvergence,
    QuenchError,
    ResourceRefusal,
    SchemaError,
    ValidationError,
)


LONG_RUN_QUBITS = 7
EXPORT_KINDS = ("sphere", "contour", "traces", "overlap")
SWEEP_COLUMNS = [
    "n_qubits", "rate", "method", "accuracy", "positive_fraction",
    "n_train", "n_test", "runtime_seconds", "status", "error",
]


def load_run_config(path) -> RunConfig:
    """
    Read a scenario JSON file.

    Raises:
        SchemaError: unreadable file or a field failing validation
    """
    try:
        return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError(f"{path}: {e}") from e
    except ValueError as e:
        raise SchemaError(f"{path}: invalid run config: {e}") from e


def _write_frame(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


class QuenchClassificationPipeline:
    """Runs one command at a time and leaves a manifest next to every artifact."""

    def __init__(
        self,
        workers: Optional[int] = None,
        enable_hooks: bool = True,
        argv: Optional[Sequence[str]] = None,
    ):
        load_dotenv()
        self.workers = workers if workers is not None else int(os.getenv("QUENCH_WORKERS", "1"))
        if self.workers == 0:
            raise ValidationError("workers must be non-zero")
        self.argv = list(argv or [])
        self.hooks = PipelineHooks() if enable_hooks else None

    # Bookkeeping

    def _start(self, stage: str) -> None:
        if self.hooks:
            self.hooks.on_stage_start(stage)

    def _end(self, stage: str, items: int = 0) -> None:
        if self.hooks:
            self.hooks.on_stage_end(stage, items)

    def _flag(self, stage: str, message: str) -> None:
        if self.hooks:
            self.hooks.on_flag(stage, message)

    def _forward_warnings(self, stage: str, caught) -> None:
        for w in caught:
            if issubclass(w.category, (NonConvergence, NearDegeneracy)):
                self._flag(stage, str(w.message))

    def _manifest(
        self,
        command: str,
        artifact,
        started: float,
        inputs: Sequence = (),
        config_paths: Sequence = (),
        seed: Optional[int] = None,
        summary: Optional[Dict] = None,
    ) -> None:
        summary = dict(summary or {})
        if self.hooks:
            summary["hooks"] = self.hooks.get_summary()
        manifest = RunManifest(
            command=command,
            argv=self.argv,
            config_paths=[str(p) for p in config_paths],
            inputs={str(p): sha256_file(p) for p in inputs},
            outputs={str(artifact): sha256_file(artifact)},
            seed=seed,
            workers=self.workers,
            wall_clock_seconds=time.time() - started,
            tool_version=TOOL_VERSION,
            started_at=datetime.fromtimestamp(started, timezone.utc).isoformat(timespec="seconds"),
            summary=summary,
        )
        write_manifest(artifact, manifest)

    def _complete(self) -> None:
        if self.hooks:
            self.hooks.on_pipeline_complete()

    # Commands

    def label(self, config_path, out_path) -> LabeledDataset:
        """Label the configured grid and write CSV + sidecar + manifest."""
        started = time.time()
        run = load_run_config(config_path)
        print(f"\n[Pipeline] Labelling: N={run.system.n_qubits}, mode={run.mode}")
        print("=" * 80)

        self._start("label")
        rows = grid_rows(run.grid)
        dataset = generate_labels(rows, run, self.workers)
        for failure in dataset.meta.failures:
            if self.hooks:
                self.hooks.on_row_failure("label", failure.index, failure.error, failure.message)
        self._end("label", len(dataset))

        write_csv(dataset, out_path)
        labels = dataset.labels
        summary = {
            "rows": len(dataset),
            "positive": int(np.sum(labels == 1)),
            "negative": int(np.sum(labels == -1)),
            "failures": len(dataset.meta.failures),
        }
        print(f"  ✓ {summary['positive']} singular / {summary['negative']} regular rows")
        self._manifest("label", out_path, started, config_paths=[config_path], seed=run.system.seed, summary=summary)
        self._complete()
        return dataset

    def _gram_items(self, dataset: LabeledDataset, spec: KernelSpec):
        run = dataset.meta.run
        if spec.method == "classical_rbf":
            return feature_matrix(dataset.rows)
        return kernel_states(run.system, dataset.rows, spec, run.extras, self.workers)

    def _build_gram(self, dataset: LabeledDataset, spec: KernelSpec, fingerprint: str) -> GramMatrix:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            items = self._gram_items(dataset, spec)
            gram = build_gram(items, spec, self.workers, fingerprint)
        self._forward_warnings("gram", caught)
        for index in gram.flagged:
            self._flag("gram", f"near-degenerate ground state at labelled row {index}")
        return gram

    @staticmethod
    def _cache_is_intact(path) -> bool:
        """The cache file still has the digest its manifest recorded."""
        if not manifest_path(path).exists():
            return False
        return read_manifest(path).outputs.get(str(path)) == sha256_file(path)

    def gram(self, dataset_path, spec: KernelSpec, out_path, force: bool = False) -> GramMatrix:
        """
        Build (or reuse) the Gram matrix over the labelled rows of a dataset.

        A cache file is reused when its kernel spec and dataset fingerprint
        both match and its manifest still records its digest, unless
        `force` is set.
        """
        started = time.time()
        dataset = read_csv(dataset_path)
        fingerprint = sha256_file(dataset_path)
        spec = spec.model_copy(update={"mode": dataset.meta.run.mode})

        if not force and Path(out_path).exists():
            header = read_gram_header(out_path)
            if (
                header["dataset_fingerprint"] == fingerprint
                and header["spec"] == spec.model_dump()
                and self._cache_is_intact(out_path)
            ):
                if self.hooks:
                    self.hooks.on_cache_hit(str(out_path))
                return load_gram(out_path)

        print(f"\n[Pipeline] Gram: {spec.method}/{spec.map} on {dataset_path}")
        print("=" * 80)
        self._start("gram")
        labeled = dataset.labeled()
        gram = self._build_gram(labeled, spec, fingerprint)
        self._end("gram", gram.n)
        save_gram(out_path, gram)
        print(f"  ✓ n={gram.n}, min eigenvalue {gram.min_eigenvalue:.3e}")
        self._manifest(
            "gram", out_path, started,
            inputs=[dataset_path],
            summary={"n": gram.n, "min_eigenvalue": gram.min_eigenvalue, "flagged": len(gram.flagged)},
        )
        self._complete()
        return gram

    def _check_gram(self, gram: GramMatrix, dataset_path, labeled: LabeledDataset) -> str:
        fingerprint = sha256_file(dataset_path)
        if gram.dataset_fingerprint != fingerprint:
            raise FingerprintMismatch(
                f"gram was built from dataset {gram.dataset_fingerprint[:12]}, got {fingerprint[:12]}"
            )
        if gram.n != len(labeled):
            raise FingerprintMismatch(f"gram has {gram.n} rows, dataset has {len(labeled)} labelled rows")
        return fingerprint

    def train(
        self,
        dataset_path,
        gram_path,
        out_path,
        split_seed: Optional[int] = None,
        tune: bool = False,
    ) -> SvmModel:
        """Train on the seeded training split; optionally cross-validate (C, width) first."""
        started = time.time()
        dataset = read_csv(dataset_path)
        labeled = dataset.labeled()
        gram = load_gram(gram_path)
        fingerprint = self._check_gram(gram, dataset_path, labeled)
        run = dataset.meta.run
        seed = run.split_seed if split_seed is None else split_seed
        train_idx, _ = split_indices(len(labeled), run.train_fraction, seed)
        y = labeled.labels

        config, spec = run.train, gram.spec
        self._start("train")
        if tune:
            config, spec, records = cross_validate(
                gram, y[train_idx], train_idx, train_config=run.train, workers=self.workers
            )
            print(f"  ✓ cross-validated: C={config.C}, spec={spec.model_dump()}")
        K = apply_map(gram.base[np.ix_(train_idx, train_idx)], spec, unit_diagonal=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = train(K, y[train_idx], config, spec)
        self._forward_warnings("train", caught)
        model = replace(
            model,
            train_indices=train_idx,
            dataset_fingerprint=fingerprint,
            gram_fingerprint=sha256_file(gram_path),
        )
        self._end("train", len(train_idx))

        save_model(model, out_path)
        print(f"  ✓ {model.support_indices.size} support vectors, converged={model.converged}")
        self._manifest(
            "train", out_path, started,
            inputs=[dataset_path, gram_path],
            seed=seed,
            summary={"support_vectors": int(model.support_indices.size), "C": config.C},
        )
        self._complete()
        return model

    def evaluate(self, dataset_path, gram_path, model_path, out_path) -> Dict:
        """Accuracy and confusion counts on the rows outside the model's training split."""
        started = time.time()
        dataset = read_csv(dataset_path)
        labeled = dataset.labeled()
        gram = load_gram(gram_path)
        fingerprint = self._check_gram(gram, dataset_path, labeled)
        model = load_model(model_path)
        if model.dataset_fingerprint != fingerprint:
            raise FingerprintMismatch("model was trained on a different dataset")
        if model.gram_fingerprint != sha256_file(gram_path):
            raise FingerprintMismatch("model was trained on a different Gram matrix")
        if model.train_indices is None:
            raise SchemaError(f"{model_path}: model does not record its training rows")

        self._start("evaluate")
        train_idx = model.train_indices
        test_idx = np.setdiff1d(np.arange(len(labeled)), train_idx)
        y = labeled.labels[test_idx]
        rows = apply_map(gram.base[np.ix_(test_idx, train_idx)], model.spec or gram.spec)
        metrics = {
            "accuracy": accuracy(model, rows, y),
            "confusion": confusion(model, rows, y),
            "n_train": int(train_idx.size),
            "n_test": int(test_idx.size),
            "support_vectors": int(model.support_indices.size),
            "C": model.upper_bound,
            "kernel": (model.spec or gram.spec).model_dump(),
            "converged": model.converged,
            "runtime_seconds": time.time() - started,
        }
        self._end("evaluate", int(test_idx.size))

        Path(out_path).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"  ✓ accuracy {metrics['accuracy']:.4f} on {metrics['n_test']} test rows")
        self._manifest(
            "eval", out_path, started,
            inputs=[dataset_path, gram_path, model_path],
            summary={"accuracy": metrics["accuracy"]},
        )
        self._complete()
        return metrics

    def _score_cell(self, labeled: LabeledDataset, method: str, run: RunConfig) -> Dict:
        started = time.time()
        spec = KernelSpec.default_for(method, run.mode)
        gram = self._build_gram(labeled, spec, "")
        y = labeled.labels
        train_idx, test_idx = split_indices(len(labeled), run.train_fraction, run.split_seed)
        config = run.train
        if method == "classical_rbf":
            config, spec, _ = cross_validate(
                gram, y[train_idx], train_idx, train_config=run.train, workers=self.workers
            )
        K = apply_map(gram.base[np.ix_(train_idx, train_idx)], spec, unit_diagonal=True)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            model = train(K, y[train_idx], config, spec)
        self._forward_warnings("sweep", caught)
        rows = apply_map(gram.base[np.ix_(test_idx, train_idx)], spec)
        return {
            "accuracy": accuracy(model, rows, y[test_idx]),
            "n_train": int(train_idx.size),
            "n_test": int(test_idx.size),
            "runtime_seconds": time.time() - started,
        }

    def sweep(
        self,
        config_path,
        out_path,
        n_list: Optional[Sequence[int]] = None,
        methods: Sequence[str] = ("GSK", "DSK"),
        noise_rates: Optional[Sequence[float]] = None,
        yes: bool = False,
    ) -> pd.DataFrame:
        """
        One row per (N, [rate,] method): accuracy and runtime.

        Raises:
            ValidationError: empty N list, or noise rates for a non-open run
            ResourceRefusal: N >= 7 without `yes`
        """
        started = time.time()
        run = load_run_config(config_path)
        n_list = [run.system.n_qubits] if n_list is None else list(n_list)
        if not n_list:
            raise ValidationError("sweep needs at least one qubit count")
        if not methods:
            raise ValidationError("sweep needs at least one method")
        big = [n for n in n_list if n >= LONG_RUN_QUBITS]
        if big and not yes:
            raise ResourceRefusal(f"N={big} runs take hours; pass --yes to proceed")
        if noise_rates is not None and run.mode != "open":
            raise ValidationError("--noise-rates requires an open-mode config")

        scenarios = []
        for n in n_list:
            try:
                system = SystemConfig.model_validate({**run.system.model_dump(), "n_qubits": n})
            except ValueError as e:
                raise ValidationError(f"invalid qubit count {n}: {e}") from e
            if noise_rates is None:
                scenarios.append((n, None, run.model_copy(update={"system": system})))
            else:
                for rate in noise_rates:
                    noise = run.noise.model_copy(update={"rate": float(rate)})
                    scenarios.append((n, float(rate), run.model_copy(update={"system": system, "noise": noise})))

        records = []
        for n, rate, scenario in scenarios:
            stage = f"sweep N={n}" + (f" rate={rate}" if rate is not None else "")
            self._start(stage)
            dataset = generate_labels(grid_rows(scenario.grid), scenario, self.workers)
            labeled = dataset.labeled()
            positive = float(np.mean(labeled.labels == 1)) if len(labeled) else math.nan
            for method in methods:
                record = {"n_qubits": n, "rate": rate, "method": method, "positive_fraction": positive}
                try:
                    record.update(self._score_cell(labeled, method, scenario))
                    record["status"] = "ok"
                except QuenchError as e:
                    record.update({"status": "failed", "error": f"{type(e).__name__}: {e}"})
                    if self.hooks:
                        self.hooks.on_row_failure(stage, n, type(e).__name__, str(e))
                records.append(record)
                print(f"  {stage} {method}: {record.get('accuracy', float('nan')):.4f}")
            self._end(stage, len(dataset))

        frame = pd.DataFrame.from_records(records, columns=SWEEP_COLUMNS)
        _write_frame(frame, out_path)
        self._manifest(
            "sweep", out_path, started,
            config_paths=[config_path],
            seed=run.split_seed,
            summary={"cells": len(records), "failed": int((frame["status"] != "ok").sum())},
        )
        self._complete()
        return frame

    def export(
        self,
        kind: str,
        out_path,
        dataset_path=None,
        config_path=None,
        theta: Optional[float] = None,
        phi: Optional[float] = None,
        h: Optional[float] = None,
    ) -> pd.DataFrame:
        """
        Plot-ready CSVs: sphere (x, y, z, label), contour (theta, phi, h, label),
        traces (t, P_plus, P_minus, lambda, m_x) and overlap (theta, phi, h, p_gsk, p_dsk).
        """
        started = time.time()
        if kind not in EXPORT_KINDS:
            raise ValidationError(f"unknown export kind '{kind}', expected one of {EXPORT_KINDS}")

        if kind == "traces":
            if config_path is None or theta is None or phi is None:
                raise ValidationError("traces export needs --config, --theta and --phi")
            run = load_run_config(config_path)
            magnitude = h if h is not None else run.grid.h
            if magnitude is None:
                raise ValidationError("traces export needs --h when the config has no single 'h'")
            field = FieldVector(h=magnitude, theta=theta, phi=phi)
            columns = trace_table(run.system, field, run.mode, run.extras)
            write_trace_csv(out_path, columns)
            self._manifest("export", out_path, started, config_paths=[config_path], summary={"kind": kind})
            return pd.DataFrame(columns)

        if dataset_path is None:
            raise ValidationError(f"{kind} export needs --dataset")
        dataset = read_csv(dataset_path)
        rows = dataset.rows
        if kind == "sphere":
            xyz = np.array([r.field_vector.cartesian for r in rows]).reshape(-1, 3)
            frame = pd.DataFrame({
                "x": xyz[:, 0], "y": xyz[:, 1], "z": xyz[:, 2],
                "label": pd.array([r.label for r in rows], dtype="Int64"),
            })
        elif kind == "contour":
            frame = pd.DataFrame({
                "theta": [r.theta for r in rows],
                "phi": [r.phi for r in rows],
                "h": [r.h for r in rows],
                "label": pd.array([r.label for r in rows], dtype="Int64"),
            })
        else:
            run = dataset.meta.run
            self._start("overlap")
            p_gsk = initial_overlap_map(run.system, rows, "GSK", run.mode, run.extras, self.workers)
            p_dsk = initial_overlap_map(run.system, rows, "DSK", run.mode, run.extras, self.workers)
            self._end("overlap", len(rows))
            frame = pd.DataFrame({
                "theta": [r.theta for r in rows],
                "phi": [r.phi for r in rows],
                "h": [r.h for r in rows],
                "p_gsk": p_gsk,
                "p_dsk": p_dsk,
            })
        _write_frame(frame, out_path)
        self._manifest("export", out_path, started, inputs=[dataset_path], summary={"kind": kind})
        return frame

    def verify(self, out_path=None, include_slow: bool = False) -> bool:
        """Run the invariant suite; True when every check passes."""
        started = time.time()
        self._start("verify")
        results = run_checks(include_slow=include_slow)
        self._end("verify", len(results))
        for r in results:
            status = "PASS" if r.passed else "FAIL"
            print(f"  [{status}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
        passed = all(r.passed for r in results)
        if out_path is not None:
            report = {"passed": passed, "checks": [r.model_dump() for r in results]}
            Path(out_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
            self._manifest("verify", out_path, started, summary={"passed": passed})
        return passed
