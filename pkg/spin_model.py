"""Long-range Ising Hamiltonian, ground manifold and observables (dense, computational basis).

Qubit 0 is the leftmost Kronecker factor; |up> = (1, 0) and |down> = (0, 1),
so sigma_z |up> = +|up>.
"""
import warnings
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from models import (
    CouplingMatrix,
    FieldVector,
    HermitianOperator,
    ObservableKind,
    PureState,
    SystemConfig,
)
from validation import (
    ConventionMismatch,
    EigensolverFailure,
    NearDegeneracy,
    ValidationError,
)


IDENTITY = np.eye(2, dtype=complex)
PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DEGENERACY_TOL = 1e-9


def kron_all(factors) -> np.ndarray:
    return reduce(np.kron, factors)


@lru_cache(maxsize=512)
def site_operator(axis: str, site: int, n_qubits: int) -> np.ndarray:
    """sigma_axis acting on `site`, identity elsewhere."""
    factors = [IDENTITY] * n_qubits
    factors[site] = PAULI[axis]
    op = kron_all(factors)
    op.setflags(write=False)
    return op


@lru_cache(maxsize=64)
def total_sigma(axis: str, n_qubits: int) -> np.ndarray:
    """Sum over sites of sigma_axis."""
    op = sum(site_operator(axis, i, n_qubits) for i in range(n_qubits))
    op.setflags(write=False)
    return op


def coupling_matrix(n_qubits: int, alpha: float, j_coupling: float = 1.0) -> CouplingMatrix:
    """Kac-normalised power-law couplings J_ij = J |i-j|^-alpha / N_alpha."""
    if n_qubits < 2:
        raise ValidationError(f"coupling_matrix needs at least 2 qubits, got {n_qubits}")
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    idx = np.arange(n_qubits)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)
    off = dist > 0
    decay = np.zeros_like(dist)
    decay[off] = dist[off] ** (-alpha)
    kac_norm = float(decay.sum() / n_qubits)
    return CouplingMatrix(entries=j_coupling * decay / kac_norm, kac_norm=kac_norm)


@lru_cache(maxsize=64)
def _interaction_matrix(n_qubits: int, alpha: float, j_coupling: float) -> np.ndarray:
    # Ordered-pair sum: each unordered pair enters twice.
    couplings = coupling_matrix(n_qubits, alpha, j_coupling).entries
    dim = 2 ** n_qubits
    h0 = np.zeros((dim, dim), dtype=complex)
    for i in range(n_qubits):
        for j in range(i + 1, n_qubits):
            h0 -= 2.0 * couplings[i, j] * (site_operator("x", i, n_qubits) @ site_operator("x", j, n_qubits))
    h0.setflags(write=False)
    return h0


def field_term(n_qubits: int, field: FieldVector) -> np.ndarray:
    """-h . sum_i sigma_i."""
    hx, hy, hz = field.cartesian
    return -(hx * total_sigma("x", n_qubits) + hy * total_sigma("y", n_qubits) + hz * total_sigma("z", n_qubits))


def build_hamiltonian(config: SystemConfig, field: FieldVector) -> HermitianOperator:
    """H_s = -sum_{i != j} J_ij X_i X_j - h . sum_i sigma_i."""
    h0 = _interaction_matrix(config.n_qubits, config.alpha, config.j_coupling)
    if field.h == 0.0:
        return HermitianOperator(h0.copy())
    return HermitianOperator(h0 + field_term(config.n_qubits, field))


def _product_state(n_qubits: int, site: np.ndarray) -> np.ndarray:
    return kron_all([site] * n_qubits)


def manifold_vectors(n_qubits: int, convention: str = "x-polarized") -> Tuple[np.ndarray, np.ndarray]:
    """Raw amplitudes of (G_plus, G_minus) without energy validation."""
    up, down = np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)
    phase = 1.0 if convention == "x-polarized" else 1j
    g_plus = _product_state(n_qubits, (up + phase * down) / np.sqrt(2.0))
    g_minus = _product_state(n_qubits, (up - phase * down) / np.sqrt(2.0))
    return g_plus, g_minus


def manifold_states(config: SystemConfig, strict: bool = True) -> Tuple[PureState, PureState]:
    """
    The two symmetry-broken ground states of the interaction-only Hamiltonian.

    Both states are checked against the lowest eigenvalue of H_0. A state
    lying above it is reported: raised when strict, warned otherwise.

    Raises:
        ConventionMismatch: <G|H_0|G> exceeds the minimum eigenvalue by > 1e-9
    """
    g_plus, g_minus = manifold_vectors(config.n_qubits, config.ground_convention)
    h0 = build_hamiltonian(config, FieldVector(h=0.0)).matrix
    e_min = float(scipy.linalg.eigvalsh(h0)[0])
    for name, vec in (("G_plus", g_plus), ("G_minus", g_minus)):
        energy = float(np.real(vec.conj() @ h0 @ vec))
        if energy > e_min + DEGENERACY_TOL:
            msg = (
                f"{config.ground_convention} {name} has energy {energy:.6f}, "
                f"ground energy is {e_min:.6f}"
            )
            if strict:
                raise ConventionMismatch(msg)
            warnings.warn(msg, stacklevel=2)
    return PureState(g_plus), PureState(g_minus)


def build_observable(n_qubits: int, kind: ObservableKind) -> HermitianOperator:
    """Parity (prod sigma_z) or a normalised magnetisation (1/N) sum sigma_a."""
    if n_qubits < 1:
        raise ValidationError("observables need at least one qubit")
    if kind == "parity":
        return HermitianOperator(kron_all([PAULI["z"]] * n_qubits))
    axis = {"magnetization_x": "x", "magnetization_y": "y", "magnetization_z": "z"}.get(kind)
    if axis is None:
        raise ValidationError(f"Unknown observable kind: {kind}")
    return HermitianOperator(total_sigma(axis, n_qubits) / n_qubits)


@dataclass(frozen=True)
class GroundStateResult:
    energy: float
    state: PureState
    gap: float
    degenerate: bool


def eigensystem(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    try:
        return scipy.linalg.eigh(matrix)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise EigensolverFailure(f"eigh did not converge: {e}") from e


def fix_global_phase(vec: np.ndarray) -> np.ndarray:
    """Make the first largest-magnitude amplitude real and positive."""
    mags = np.abs(vec)
    k = int(np.flatnonzero(mags >= mags.max() - 1e-12)[0])
    return vec * (np.conj(vec[k]) / mags[k])


def ground_state_details(
    hamiltonian: HermitianOperator,
    reference: Optional[np.ndarray] = None,
) -> GroundStateResult:
    """
    Lowest eigenpair with a deterministic choice inside a degenerate eigenspace.

    Inside the degenerate eigenspace the vector closest to `reference`
    (default: the x-polarized G_minus) is returned; the global phase is then
    fixed so the largest amplitude is real positive.
    """
    evals, evecs = eigensystem(hamiltonian.matrix)
    e0 = float(evals[0])
    in_ground = evals <= e0 + DEGENERACY_TOL
    degenerate = bool(in_ground.sum() > 1)
    gap = float(evals[1] - evals[0]) if evals.size > 1 else float("inf")

    if degenerate:
        if reference is None:
            reference = manifold_vectors(hamiltonian.n_qubits)[1]
        sub = evecs[:, in_ground]
        coeffs = sub.conj().T @ reference
        weight = float(np.linalg.norm(coeffs))
        vec = sub @ (coeffs / weight) if weight > 1e-12 else sub[:, 0]
    else:
        vec = evecs[:, 0]
    vec = fix_global_phase(vec / np.linalg.norm(vec))
    return GroundStateResult(energy=e0, state=PureState(vec), gap=gap, degenerate=degenerate)


def ground_state(
    hamiltonian: HermitianOperator,
    reference: Optional[np.ndarray] = None,
) -> Tuple[float, PureState]:
    """Minimum eigenvalue and its (tie-broken, phase-fixed) eigenvector."""
    result = ground_state_details(hamiltonian, reference)
    if result.degenerate:
        warnings.warn(
            f"Ground energy {result.energy:.6f} is degenerate; tie-break applied",
            NearDegeneracy,
            stacklevel=2,
        )
    return result.energy, result.state
