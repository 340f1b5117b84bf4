"""Soft-margin kernel SVM on a precomputed Gram matrix (SMO dual solver)."""
import json
import warnings
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import bisect
from sklearn.model_selection import StratifiedKFold

from kernels import apply_map
from models import GramMatrix, KernelSpec, SvmModel, TrainConfig
from validation import (
    DimensionMismatch,
    NonConvergence,
    SchemaError,
    SingleClassDataset,
    ValidationError,
)


DEFAULT_C_GRID = [0.1, 1.0, 10.0, 100.0]
DEFAULT_GAMMA_GRID = [0.25, 0.5, 1.0, 2.0, 4.0]
ORACLE_MAX_N = 50
TAU = 1e-12


def _check_inputs(kernel: np.ndarray, labels) -> np.ndarray:
    y = np.asarray(labels)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise DimensionMismatch(f"Gram must be square, got {kernel.shape}")
    if y.shape != (kernel.shape[0],):
        raise DimensionMismatch(f"{y.size} labels for a {kernel.shape[0]}x{kernel.shape[0]} Gram")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValidationError("labels must be +1 or -1")
    if np.unique(y).size < 2:
        raise SingleClassDataset("training labels contain a single class")
    return y.astype(float)


def _bias(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, C: float, eps: float = 0.0) -> float:
    """Average y*G over free vectors; midpoint of the feasible interval when none are free."""
    yg = y * grad
    at_upper = alpha >= C - eps
    at_lower = alpha <= eps
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
    lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
    if not np.isfinite(ub) or not np.isfinite(lb):
        return float(ub if np.isfinite(ub) else lb)
    return 0.5 * (ub + lb)


def dual_objective(coeffs: Union[SvmModel, np.ndarray], gram: np.ndarray, labels) -> float:
    """sum c - 1/2 sum_mm' y_m c_m K_mm' y_m' c_m'."""
    c = coeffs.dual_coeffs if isinstance(coeffs, SvmModel) else np.asarray(coeffs, dtype=float)
    v = c * np.asarray(labels, dtype=float)
    return float(c.sum() - 0.5 * v @ np.asarray(gram) @ v)


def _model(alpha, y, bias, C, converged, iterations, objective, spec=None, config=None) -> SvmModel:
    support = np.flatnonzero(alpha > 0)
    return SvmModel(
        support_indices=support,
        support_coeffs=alpha[support].copy(),
        support_labels=y[support].astype(int),
        bias=bias,
        upper_bound=C,
        n_train=alpha.size,
        spec=spec,
        train_config=config,
        converged=converged,
        iterations=iterations,
        objective=objective,
    )


def train(
    gram: np.ndarray,
    labels,
    config: Optional[TrainConfig] = None,
    spec: Optional[KernelSpec] = None,
) -> SvmModel:
    """
    Solve the SVM dual by sequential minimal optimization.

    Working pairs are chosen by maximal KKT violation (first index) and
    second-order gain (second index); each pair is updated analytically
    inside the box [0, C] on the line y_i a_i + y_j a_j = const.

    Raises:
        SingleClassDataset: only one label present

    Warns:
        NonConvergence: `max_passes` reached before the KKT gap fell below `kkt_tol`
    """
    config = config or TrainConfig()
    K = np.asarray(gram, dtype=float)
    y = _check_inputs(K, labels)
    n, C = y.size, config.C
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a with Q = yy' * K
    previous = 0.0
    converged = False
    iterations = 0

    while iterations < config.max_passes:
        score = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            converged = True
            break
        up_idx = np.flatnonzero(up)
        i = int(up_idx[np.argmax(score[up_idx])])
        gmax = score[i]
        gmin = float(score[low].min())
        if gmax - gmin < config.kkt_tol:
            converged = True
            break

        candidates = np.flatnonzero(low & (score < gmax))
        b = gmax - score[candidates]
        a = diag[i] + diag[candidates] - 2.0 * K[i, candidates]
        a = np.where(a > 0, a, TAU)
        j = int(candidates[np.argmin(-(b * b) / a)])

        old_i, old_j = alpha[i], alpha[j]
        quad = diag[i] + diag[j] - 2.0 * K[i, j]
        quad = quad if quad > 0 else TAU
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > C:
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total

        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        grad += y * (y[i] * d_i * K[i] + y[j] * d_j * K[j])
        iterations += 1

        if config.debug:
            current = 0.5 * (alpha.sum() - alpha @ grad)
            assert current >= previous - 1e-12 * max(1.0, abs(previous)), (
                f"dual objective decreased from {previous} to {current}"
            )
            previous = current

    if not converged:
        warnings.warn(
            f"SMO stopped after {iterations} pair updates without meeting kkt_tol={config.kkt_tol}",
            NonConvergence,
            stacklevel=2,
        )
    objective = 0.5 * float(alpha.sum() - alpha @ grad)
    return _model(alpha, y, _bias(alpha, grad, y, C), C, converged, iterations, objective, spec, config)


def _project(v: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection onto {a : y'a = 0, 0 <= a <= C}."""
    def residual(mu: float) -> float:
        return float(y @ np.clip(v - mu * y, 0.0, C))

    span = float(np.abs(v).max()) + C + 1.0
    mu = bisect(residual, -span, span, xtol=1e-14, maxiter=500)
    return np.clip(v - mu * y, 0.0, C)


def qp_oracle_small(gram: np.ndarray, labels, C: float, tol: float = 1e-10, max_iter: int = 200_000) -> SvmModel:
    """
    Reference solver: accelerated projected gradient on the same dual, with
    exact projection onto the feasible set. For small instances only.
    """
    K = np.asarray(gram, dtype=float)
    y = _check_inputs(K, labels)
    if y.size > ORACLE_MAX_N:
        raise ValidationError(f"qp_oracle_small handles at most {ORACLE_MAX_N} points")
    if not C > 0:
        raise ValidationError("C must be positive")
    Q = np.outer(y, y) * K
    step = 1.0 / max(float(np.linalg.eigvalsh(Q)[-1]), 1e-12)

    def objective(a):
        return 0.5 * a @ Q @ a - a.sum()

    alpha = np.zeros(y.size)
    momentum = alpha.copy()
    t = 1.0
    f_old = objective(alpha)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = _project(momentum - step * (Q @ momentum - 1.0), y, C)
        f_new = objective(nxt)
        if f_new > f_old:
            # restart the momentum when the objective goes up
            momentum, t = alpha.copy(), 1.0
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        momentum = nxt + ((t - 1.0) / t_next) * (nxt - alpha)
        moved = float(np.abs(nxt - alpha).max())
        stalled = abs(f_old - f_new) <= tol * max(1.0, abs(f_new))
        alpha, t, f_old = nxt, t_next, f_new
        if stalled and moved <= tol:
            converged = True
            break

    grad = Q @ alpha - 1.0
    bias = _bias(alpha, grad, y, C, eps=1e-9 * C)
    return _model(alpha, y, bias, C, converged, iterations, -f_old)


def decision(model: SvmModel, kernel_row) -> Union[float, np.ndarray]:
    """sum_m c_m y_m K(x_m, x) - b for one row or a (k, n_train) block of rows."""
    rows = np.asarray(kernel_row, dtype=float)
    if rows.shape[-1] != model.n_train:
        raise DimensionMismatch(f"kernel row has {rows.shape[-1]} entries, model has {model.n_train}")
    weights = model.support_coeffs * model.support_labels
    values = rows[..., model.support_indices] @ weights - model.bias
    return float(values) if rows.ndim == 1 else values


def predict(model: SvmModel, kernel_row) -> Union[int, np.ndarray]:
    """Sign of the decision value; an exact zero maps to +1."""
    values = decision(model, kernel_row)
    if np.ndim(values) == 0:
        return 1 if values >= 0 else -1
    return np.where(values >= 0, 1, -1)


def accuracy(model: SvmModel, kernel_rows, labels) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        raise ValidationError("accuracy needs a non-empty test set")
    predicted = np.atleast_1d(predict(model, np.atleast_2d(kernel_rows)))
    return float(np.mean(predicted == y))


def confusion(model: SvmModel, kernel_rows, labels) -> Dict[str, int]:
    """Counts with +1 as the positive (singular) class."""
    y = np.asarray(labels)
    predicted = np.atleast_1d(predict(model, np.atleast_2d(kernel_rows)))
    return {
        "tp": int(np.sum((predicted == 1) & (y == 1))),
        "tn": int(np.sum((predicted == -1) & (y == -1))),
        "fp": int(np.sum((predicted == 1) & (y == -1))),
        "fn": int(np.sum((predicted == -1) & (y == 1))),
    }


def _fold_accuracy(base, y, spec, C, train_config, train_idx, val_idx) -> float:
    K_train = apply_map(base[np.ix_(train_idx, train_idx)], spec, unit_diagonal=True)
    K_val = apply_map(base[np.ix_(val_idx, train_idx)], spec)
    config = train_config.model_copy(update={"C": C})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        model = train(K_train, y[train_idx], config, spec)
    return accuracy(model, K_val, y[val_idx])


def cross_validate(
    gram: GramMatrix,
    labels,
    indices: Optional[Sequence[int]] = None,
    folds: int = 5,
    C_grid: Optional[Sequence[float]] = None,
    gamma_grid: Optional[Sequence[float]] = None,
    train_config: Optional[TrainConfig] = None,
    workers: int = 1,
) -> Tuple[TrainConfig, KernelSpec, List[dict]]:
    """
    Stratified k-fold grid search over (C, width) on the rows in `indices`.

    The width is gamma for qrbf and gamma_c for classical_rbf; qlin has no
    width. Ties go to the smaller C, then the smaller width.

    Returns:
        Best TrainConfig, best KernelSpec, and one score record per candidate
    """
    if folds < 2:
        raise ValidationError("cross_validate needs at least 2 folds")
    train_config = train_config or TrainConfig()
    indices = np.arange(gram.n) if indices is None else np.asarray(indices)
    y = np.asarray(labels)
    if y.shape != indices.shape:
        raise DimensionMismatch(f"{y.size} labels for {indices.size} rows")
    _, counts = np.unique(y, return_counts=True)
    if counts.size < 2 or counts.min() < folds:
        raise ValidationError(f"class counts {counts.tolist()} too small for {folds} stratified folds")

    base = gram.base[np.ix_(indices, indices)]
    C_values = sorted(C_grid or DEFAULT_C_GRID)
    tunable = gram.spec.method == "classical_rbf" or gram.spec.map == "qrbf"
    widths = sorted(gamma_grid or DEFAULT_GAMMA_GRID) if tunable else [None]
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=train_config.seed)
    splits = list(splitter.split(np.zeros(y.size), y))

    candidates = list(product(C_values, widths))
    tasks = [(c, w, tr, va) for c, w in candidates for tr, va in splits]
    scores = Parallel(n_jobs=workers)(
        delayed(_fold_accuracy)(base, y, gram.spec.with_width(w), c, train_config, tr, va)
        for c, w, tr, va in tasks
    )

    records, best = [], None
    for k, (c, w) in enumerate(candidates):
        mean = float(np.mean(scores[k * folds:(k + 1) * folds]))
        records.append({"C": c, "width": w, "mean_accuracy": mean})
        if best is None or mean > best[0]:
            best = (mean, c, w)
    _, best_c, best_w = best
    return train_config.model_copy(update={"C": best_c}), gram.spec.with_width(best_w), records


# Persistence

def save_model(model: SvmModel, path) -> None:
    payload = {
        "support_indices": model.support_indices.tolist(),
        "support_coeffs": model.support_coeffs.tolist(),
        "support_labels": model.support_labels.tolist(),
        "bias": model.bias,
        "upper_bound": model.upper_bound,
        "n_train": model.n_train,
        "spec": model.spec.model_dump() if model.spec else None,
        "train_config": model.train_config.model_dump() if model.train_config else None,
        "train_indices": model.train_indices.tolist() if model.train_indices is not None else None,
        "dataset_fingerprint": model.dataset_fingerprint,
        "gram_fingerprint": model.gram_fingerprint,
        "converged": model.converged,
        "iterations": model.iterations,
        "objective": model.objective,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> SvmModel:
    """
    Raises:
        SchemaError: unreadable file or missing/invalid fields
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        return SvmModel(
            support_indices=np.asarray(data["support_indices"], dtype=int),
            support_coeffs=np.asarray(data["support_coeffs"], dtype=float),
            support_labels=np.asarray(data["support_labels"], dtype=int),
            bias=float(data["bias"]),
            upper_bound=float(data["upper_bound"]),
            n_train=int(data["n_train"]),
            spec=KernelSpec.model_validate(data["spec"]) if data.get("spec") else None,
            train_config=TrainConfig.model_validate(data["train_config"]) if data.get("train_config") else None,
            train_indices=(
                np.asarray(data["train_indices"], dtype=int) if data.get("train_indices") is not None else None
            ),
            dataset_fingerprint=data.get("dataset_fingerprint", ""),
            gram_fingerprint=data.get("gram_fingerprint", ""),
            converged=bool(data.get("converged", True)),
            iterations=int(data.get("iterations", 0)),
            objective=float(data.get("objective", 0.0)),
        )
    except (OSError, KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: unreadable model: {e}") from e
