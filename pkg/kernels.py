"""Kernel states (GSK/DSK), quantum inner products, kernel maps and Gram matrices."""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed

from models import (
    DensityOperator,
    FeatureRow,
    FieldVector,
    GramMatrix,
    KernelMethod,
    KernelSpec,
    Mode,
    PureState,
    SystemConfig,
)
from provenance import canonical_json, sha256_bytes
from singularity import Extras, critical_time, quench_trajectory
from spin_model import build_hamiltonian, ground_state_details, manifold_states
from validation import (
    DegenerateGroundState,
    DimensionMismatch,
    InvariantValidator,
    SchemaError,
    ValidationError,
)


GRAM_FORMAT = "quench-gram/1"
# Rows per parallel task; fixed so the arithmetic never depends on worker count.
GRAM_CHUNK = 128
OVERLAP_TOL = 1e-10
DEGENERACY_GAP = 1e-9


@dataclass(frozen=True)
class KernelState:
    """State attached to one feature row: amplitudes (d,) or density matrix (d, d)."""
    data: np.ndarray
    mixed: bool
    flagged: bool = False
    t_c: Optional[float] = None

    def as_state(self) -> Union[PureState, DensityOperator]:
        return DensityOperator(self.data) if self.mixed else PureState(self.data)


def pure_overlap(psi_a: PureState, psi_b: PureState) -> float:
    """|<psi_a|psi_b>|^2."""
    if psi_a.dim != psi_b.dim:
        raise DimensionMismatch(f"state dims {psi_a.dim} and {psi_b.dim} differ")
    value = abs(np.vdot(psi_a.amplitudes, psi_b.amplitudes)) ** 2
    return float(InvariantValidator.clamp_unit(value, OVERLAP_TOL, "pure overlap"))


def mixed_overlap(rho_a: DensityOperator, rho_b: DensityOperator) -> float:
    """Tr(rho_a rho_b)."""
    if rho_a.dim != rho_b.dim:
        raise DimensionMismatch(f"density dims {rho_a.dim} and {rho_b.dim} differ")
    # Tr(A B) = sum_ab A_ab conj(B_ab) for Hermitian B
    value = np.vdot(rho_b.matrix.ravel(), rho_a.matrix.ravel())
    value = InvariantValidator.real_part(value, OVERLAP_TOL, "mixed overlap")
    return float(InvariantValidator.clamp_unit(value, OVERLAP_TOL, "mixed overlap"))


def apply_map(base: np.ndarray, spec: KernelSpec, unit_diagonal: bool = False) -> np.ndarray:
    """
    Map raw pairwise values to kernel values.

    For quantum methods `base` holds inner products I in [0, 1]; for the
    classical baseline it holds squared feature distances.

    Raises:
        ValidationError: an inner product lies outside [-1e-10, 1 + 1e-10]
    """
    base = np.asarray(base, dtype=float)
    if spec.method == "classical_rbf":
        out = np.exp(-spec.gamma_c * base)
    else:
        if base.size:
            lo, hi = float(base.min()), float(base.max())
            if lo < -OVERLAP_TOL or hi > 1.0 + OVERLAP_TOL:
                raise ValidationError(f"inner products span [{lo:.3e}, {hi:.3e}], outside [0, 1]")
        inner = np.clip(base, 0.0, 1.0)
        if spec.map == "qlin":
            out = inner.copy()
        else:
            out = np.exp(-spec.gamma * np.sqrt(np.maximum(1.0 - inner, 0.0)))
    if unit_diagonal and out.ndim == 2:
        np.fill_diagonal(out, 1.0)
    return out


def kernel_map(inner: float, spec: KernelSpec) -> float:
    """K^qlin = I, K^qrbf = exp(-gamma sqrt(1 - I))."""
    if spec.method == "classical_rbf":
        raise ValidationError("kernel_map applies to quantum inner products only")
    return float(apply_map(np.asarray(inner), spec))


def classical_rbf(x_a, x_b, gamma_c: float) -> float:
    """exp(-gamma_c |x_a - x_b|^2) on scaled features."""
    diff = np.asarray(x_a, dtype=float) - np.asarray(x_b, dtype=float)
    return float(np.exp(-gamma_c * float(diff @ diff)))


def feature_matrix(rows: Sequence[FeatureRow]) -> np.ndarray:
    """Scaled (theta/2pi, phi/pi, h/h_max) features."""
    if not rows:
        raise ValidationError("feature_matrix needs at least one row")
    raw = np.array([[r.theta, r.phi, r.h] for r in rows], dtype=float)
    h_max = float(raw[:, 2].max())
    scale = np.array([2.0 * np.pi, np.pi, h_max if h_max > 0 else 1.0])
    return raw / scale


# Kernel states

def _gsk(config: SystemConfig, field: FieldVector, mode: Mode, strict: bool) -> KernelState:
    if field.h == 0.0:
        raise ValidationError("GSK is undefined at zero field")
    result = ground_state_details(build_hamiltonian(config, field))
    flagged = result.degenerate or result.gap < DEGENERACY_GAP * config.j_coupling
    if flagged and strict:
        raise DegenerateGroundState(
            f"ground gap {result.gap:.3e} at h={field.h}, theta={field.theta}, phi={field.phi}"
        )
    vec = result.state.amplitudes
    if mode == "open":
        return KernelState(np.outer(vec, vec.conj()), mixed=True, flagged=flagged)
    return KernelState(np.array(vec), mixed=False, flagged=flagged)


def _dsk(config: SystemConfig, field: FieldVector, mode: Mode, extras: Extras) -> KernelState:
    mixed = mode == "open"
    if field.h == 0.0:
        g_minus = manifold_states(config)[1]
        data = g_minus.projector().matrix if mixed else g_minus.amplitudes
        return KernelState(np.array(data), mixed=mixed, t_c=0.0)
    trajectory = quench_trajectory(config, field, mode, extras)
    t_c, _ = critical_time(trajectory, config)
    index = int(np.searchsorted(trajectory.grid.times, t_c))
    return KernelState(np.array(trajectory.states[index]), mixed=mixed, t_c=t_c)


def kernel_state(
    config: SystemConfig,
    field: FieldVector,
    spec: KernelSpec,
    extras: Extras = None,
) -> KernelState:
    """The GSK or DSK state of one field under `spec.mode`."""
    if spec.method == "GSK":
        return _gsk(config, field, spec.mode, strict=False)
    if spec.method == "DSK":
        return _dsk(config, field, spec.mode, extras)
    raise ValidationError("classical_rbf has no kernel state; use feature_matrix")


def gsk_state(
    config: SystemConfig,
    field: FieldVector,
    mode: Mode = "closed",
    strict: bool = False,
) -> Union[PureState, DensityOperator]:
    """
    Ground state of H_s(h) with the deterministic tie-break; the projector in open mode.

    Driven quenches use the undriven H_s, so GSK carries no drive information.

    Raises:
        ValidationError: zero field
        DegenerateGroundState: gap below 1e-9 J and strict is set
    """
    return _gsk(config, field, mode, strict).as_state()


def dsk_state(
    config: SystemConfig,
    field: FieldVector,
    mode: Mode = "closed",
    extras: Extras = None,
) -> Union[PureState, DensityOperator]:
    """State (or density operator) at the time maximising <M_x> inside the labelling window."""
    return _dsk(config, field, mode, extras).as_state()


def kernel_states(
    config: SystemConfig,
    rows: Sequence[FeatureRow],
    spec: KernelSpec,
    extras: Extras = None,
    workers: int = 1,
) -> List[KernelState]:
    """One state per row, computed once; order follows `rows`."""
    return Parallel(n_jobs=workers)(
        delayed(kernel_state)(config, row.field_vector, spec, extras) for row in rows
    )


def initial_overlap_map(
    config: SystemConfig,
    rows: Sequence[FeatureRow],
    method: KernelMethod,
    mode: Mode = "closed",
    extras: Extras = None,
    workers: int = 1,
) -> np.ndarray:
    """|<G_minus|Psi_m>|^2 (or <G_minus|rho_m|G_minus>) per row."""
    spec = KernelSpec.default_for(method, mode)
    g_minus = manifold_states(config)[1].amplitudes
    states = kernel_states(config, rows, spec, extras, workers)
    values = []
    for st in states:
        if st.mixed:
            values.append(InvariantValidator.real_part(g_minus.conj() @ st.data @ g_minus, 1e-9, "overlap"))
        else:
            values.append(abs(np.vdot(g_minus, st.data)) ** 2)
    return InvariantValidator.clamp_unit(np.array(values, dtype=float), 1e-6, "initial overlap")


# Gram construction

def _stack(items: Sequence[KernelState]) -> tuple[np.ndarray, bool]:
    if not items:
        raise ValidationError("Gram construction needs at least one state")
    mixed = {st.mixed for st in items}
    shapes = {st.data.shape for st in items}
    if len(mixed) != 1 or len(shapes) != 1:
        raise DimensionMismatch(f"kernel states disagree in kind or shape: {sorted(shapes)}")
    is_mixed = mixed.pop()
    flat = np.stack([st.data.reshape(-1) for st in items]).astype(complex)
    return flat, is_mixed


def _inner_block(block: np.ndarray, flat: np.ndarray, is_mixed: bool) -> np.ndarray:
    products = block.conj() @ flat.T
    if is_mixed:
        values = InvariantValidator.real_part(products, OVERLAP_TOL, "gram inner products")
    else:
        values = np.abs(products) ** 2
    return InvariantValidator.clamp_unit(values, OVERLAP_TOL, "gram inner products")


def _distance_block(block: np.ndarray, features: np.ndarray) -> np.ndarray:
    diff = block[:, None, :] - features[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _base_matrix(items, spec: KernelSpec, workers: int) -> np.ndarray:
    if spec.method == "classical_rbf":
        data = np.asarray(items, dtype=float)
        if data.ndim != 2 or data.shape[0] == 0:
            raise ValidationError("classical_rbf needs a non-empty (n, d) feature matrix")
        task, extra = _distance_block, ()
    else:
        data, is_mixed = _stack(items)
        task, extra = _inner_block, (is_mixed,)
    n = data.shape[0]
    starts = list(range(0, n, GRAM_CHUNK))
    # Each chunk of rows is paired only with the columns at or right of its diagonal.
    blocks = Parallel(n_jobs=workers)(
        delayed(task)(data[s:s + GRAM_CHUNK], data[s:], *extra) for s in starts
    )
    upper = np.zeros((n, n))
    for s, block in zip(starts, blocks):
        upper[s:s + block.shape[0], s:] = block
    upper = np.triu(upper, 1)
    base = upper + upper.T
    np.fill_diagonal(base, 0.0 if spec.method == "classical_rbf" else 1.0)
    return base


def min_eigenvalue(values: np.ndarray) -> float:
    return float(scipy.linalg.eigvalsh(values, subset_by_index=[0, 0])[0])


def build_gram(
    items,
    spec: KernelSpec,
    workers: int = 1,
    dataset_fingerprint: str = "",
) -> GramMatrix:
    """
    Gram matrix over kernel states (quantum methods) or scaled features (classical_rbf).

    Rows are computed in fixed-size chunks in parallel and the upper
    triangle is mirrored, so the result is bit-identical for any worker count.

    Raises:
        PsdViolation: minimum eigenvalue below -1e-6
        DimensionMismatch: states of different kind or dimension
    """
    base = _base_matrix(items, spec, workers)
    flagged = []
    if spec.method != "classical_rbf":
        flagged = [i for i, st in enumerate(items) if st.flagged]
    values = apply_map(base, spec, unit_diagonal=True)
    lowest = min_eigenvalue(values)
    InvariantValidator.check_gram(values, lowest)
    return GramMatrix(
        base=base,
        spec=spec,
        dataset_fingerprint=dataset_fingerprint,
        min_eigenvalue=lowest,
        flagged=flagged,
    )


def gram_row(new_item, training_items, spec: KernelSpec) -> np.ndarray:
    """Kernel values of one new state (or feature vector) against every training item."""
    if training_items is None or len(training_items) == 0:
        raise ValidationError("gram_row needs a non-empty training set")
    if spec.method == "classical_rbf":
        features = np.asarray(training_items, dtype=float)
        point = np.asarray(new_item, dtype=float)
        if point.shape != features.shape[1:]:
            raise DimensionMismatch(f"feature shape {point.shape} vs {features.shape[1:]}")
        base = _distance_block(point[None, :], features)[0]
    else:
        flat, is_mixed = _stack(list(training_items))
        point, point_mixed = _stack([new_item])
        if point_mixed != is_mixed or point.shape[1] != flat.shape[1]:
            raise DimensionMismatch("new state does not match the training states")
        base = _inner_block(point, flat, is_mixed)[0]
    return apply_map(base, spec)


# Cache file: one JSON header line, then n*n little-endian float64 values of `base`.

def save_gram(path, gram: GramMatrix) -> None:
    header = {
        "format": GRAM_FORMAT,
        "n": gram.n,
        "spec": gram.spec.model_dump(),
        "dataset_fingerprint": gram.dataset_fingerprint,
        "min_eigenvalue": gram.min_eigenvalue,
        "flagged": list(gram.flagged),
    }
    payload = np.ascontiguousarray(gram.base, dtype="<f8").tobytes(order="C")
    header["payload_sha256"] = sha256_bytes(payload)
    with open(path, "wb") as f:
        f.write(canonical_json(header).encode("utf-8") + b"\n")
        f.write(payload)


def read_gram_header(path) -> dict:
    """Parse only the header line of a cache file."""
    with open(path, "rb") as f:
        line = f.readline()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError(f"{path}: unreadable gram header: {e}") from e
    if not isinstance(header, dict) or header.get("format") != GRAM_FORMAT:
        raise SchemaError(f"{path}: not a {GRAM_FORMAT} file")
    for key in ("n", "spec", "dataset_fingerprint", "payload_sha256"):
        if key not in header:
            raise SchemaError(f"{path}: gram header is missing '{key}'")
    return header


def load_gram(path) -> GramMatrix:
    """
    Read a cached Gram matrix.

    Raises:
        SchemaError: corrupt header, or a payload of the wrong length or digest
    """
    header = read_gram_header(path)
    raw = Path(path).read_bytes()
    payload = raw[raw.index(b"\n") + 1:]
    n = int(header["n"])
    if len(payload) != n * n * 8:
        raise SchemaError(f"{path}: payload has {len(payload)} bytes, expected {n * n * 8}")
    if header["payload_sha256"] != sha256_bytes(payload):
        raise SchemaError(f"{path}: payload digest does not match the header")
    try:
        spec = KernelSpec.model_validate(header["spec"])
    except ValueError as e:
        raise SchemaError(f"{path}: invalid kernel spec in header: {e}") from e
    base = np.frombuffer(payload, dtype="<f8").reshape(n, n).astype(float)
    return GramMatrix(
        base=base,
        spec=spec,
        dataset_fingerprint=header["dataset_fingerprint"],
        min_eigenvalue=float(header.get("min_eigenvalue", 0.0)),
        flagged=list(header.get("flagged", [])),
    )
