"""Named invariant checks run by `verify`."""
import math
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel
from scipy.spatial.transform import Rotation

from dynamics import evolve_closed, evolve_lindblad, inversion_test_overlap, make_grid, trotter_propagate
from kernels import build_gram, kernel_states, mixed_overlap, pure_overlap
from models import (
    FeatureRow,
    FieldVector,
    KernelSpec,
    NoiseSpec,
    PureState,
    SystemConfig,
    TrainConfig,
)
from singularity import label_field
from spin_model import build_hamiltonian, build_observable, manifold_states
from svm import qp_oracle_small, train
from validation import InvariantValidator, QuenchError


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0


CheckFn = Callable[[np.random.Generator], Tuple[bool, str]]


def random_field(rng: np.random.Generator, h_low: float = 0.5, h_high: float = 2.0) -> FieldVector:
    return FieldVector(
        h=float(rng.uniform(h_low, h_high)),
        theta=float(rng.uniform(0.0, 2.0 * math.pi)),
        phi=float(rng.uniform(0.0, math.pi)),
    )


def rotate_field(field: FieldVector, axis, angle: float) -> FieldVector:
    """Rigid rotation of the field vector about `axis` by `angle`."""
    axis = np.asarray(axis, dtype=float)
    rotated = Rotation.from_rotvec(angle * axis / np.linalg.norm(axis)).apply(field.cartesian)
    return FieldVector.from_cartesian(rotated)


def random_state(rng: np.random.Generator, dim: int) -> PureState:
    vec = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return PureState(vec / np.linalg.norm(vec))


def random_pd_gram(rng: np.random.Generator, n: int) -> np.ndarray:
    """Normalised A A^T: positive definite with a unit diagonal."""
    a = rng.normal(size=(n, n + 2))
    g = a @ a.T
    d = np.sqrt(np.diag(g))
    g = g / np.outer(d, d)
    g = 0.5 * (g + g.T)
    np.fill_diagonal(g, 1.0)
    return g


# Individual checks

def check_ground_energy_law(rng) -> Tuple[bool, str]:
    worst, bad = 0.0, []
    for n in range(2, 7):
        for alpha in (0.25, 0.5, 1.0, 2.0):
            h0 = build_hamiltonian(SystemConfig(n_qubits=n, alpha=alpha), FieldVector(h=0.0)).matrix
            evals = scipy.linalg.eigvalsh(h0)
            worst = max(worst, abs(evals[0] + n))
            if int(np.sum(evals <= evals[0] + 1e-9)) != 2:
                bad.append((n, alpha))
    return worst < 1e-9 and not bad, f"max |E0 + N J| = {worst:.2e}, wrong degeneracy at {bad}"


def check_hamiltonian_hermitian(rng) -> Tuple[bool, str]:
    for _ in range(10):
        config = SystemConfig(n_qubits=int(rng.integers(2, 5)), alpha=float(rng.uniform(0.2, 3.0)))
        InvariantValidator.check_hermitian(build_hamiltonian(config, random_field(rng)).matrix)
    return True, "10 random Hamiltonians"


def check_parity_symmetry(rng) -> Tuple[bool, str]:
    worst = 0.0
    for n in (2, 3, 4):
        h0 = build_hamiltonian(SystemConfig(n_qubits=n, alpha=0.5), FieldVector(h=0.0)).matrix
        parity = build_observable(n, "parity").matrix
        worst = max(worst, float(np.abs(h0 @ parity - parity @ h0).max()))
    return worst < 1e-12, f"max |[H0, O]| = {worst:.2e}"


def check_reference_labels(rng) -> Tuple[bool, str]:
    config = SystemConfig(n_qubits=2, alpha=0.5)
    singular = label_field(config, FieldVector(h=0.6, theta=1.5 * math.pi, phi=0.5 * math.pi))
    regular = label_field(config, FieldVector(h=0.6, theta=1.3 * math.pi, phi=0.5 * math.pi))
    return (
        singular.label == 1 and regular.label == -1,
        f"(1.5pi, pi/2) -> {singular.label}, (1.3pi, pi/2) -> {regular.label}",
    )


def check_closed_norm(rng) -> Tuple[bool, str]:
    config = SystemConfig(n_qubits=3, alpha=0.5)
    psi0 = manifold_states(config)[1]
    traj = evolve_closed(build_hamiltonian(config, random_field(rng)), psi0, make_grid(20.0, 2000))
    drift = float(np.abs(np.linalg.norm(traj.states, axis=1) - 1.0).max())
    return drift < 1e-10, f"max norm drift {drift:.2e}"


def check_lindblad_physicality(rng, draws: int = 20) -> Tuple[bool, str]:
    config = SystemConfig(n_qubits=2, alpha=0.5)
    rho0 = manifold_states(config)[1].projector()
    worst = 0.0
    for _ in range(draws):
        noise = NoiseSpec(
            channel=str(rng.choice(["spontaneous_emission", "phase_damping"])),
            rate=float(rng.uniform(0.0, 0.1)),
        )
        traj = evolve_lindblad(config, random_field(rng), noise, rho0, make_grid(5.0, 500))
        for rho in traj.states[::50]:
            worst = min(worst, InvariantValidator.check_density(rho, psd_tol=1e-6))
    return True, f"{draws} draws, min eigenvalue {worst:.2e}"


def check_mixed_pure_consistency(rng, pairs: int = 100) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(pairs):
        a, b = random_state(rng, 4), random_state(rng, 4)
        worst = max(worst, abs(pure_overlap(a, b) - mixed_overlap(a.projector(), b.projector())))
    return worst <= 1e-10, f"{pairs} pairs, max deviation {worst:.2e}"


def check_gram_invariants(rng, grams: int = 20, size: int = 12) -> Tuple[bool, str]:
    """Symmetry, unit diagonal and PSD of GSK and DSK Grams over random field sets."""
    config = SystemConfig(n_qubits=2, alpha=0.5)
    worst_eig, worst_asym, worst_diag = 0.0, 0.0, 0.0
    for k in range(grams):
        spec = KernelSpec.default_for("GSK" if k % 2 == 0 else "DSK")
        rows = [FeatureRow(theta=f.theta, phi=f.phi, h=f.h) for f in (random_field(rng) for _ in range(size))]
        values = build_gram(kernel_states(config, rows, spec), spec).values
        worst_asym = max(worst_asym, float(np.abs(values - values.T).max()))
        worst_diag = max(worst_diag, float(np.abs(np.diag(values) - 1.0).max()))
        worst_eig = min(worst_eig, float(scipy.linalg.eigvalsh(values)[0]))
    return (
        worst_asym == 0.0 and worst_diag == 0.0 and worst_eig >= -1e-8,
        f"{grams} Grams, asymmetry {worst_asym:.1e}, diagonal error {worst_diag:.1e}, min eigenvalue {worst_eig:.2e}",
    )


def check_rotation_symmetry(rng, pairs: int = 100) -> Tuple[bool, str]:
    """Rotating the field about the x axis commutes with H_0 and preserves the x-polarised manifold."""
    config = SystemConfig(n_qubits=2, alpha=0.5)
    agree = 0
    for _ in range(pairs):
        field = random_field(rng, 0.5, 1.5)
        rotated = rotate_field(field, [1.0, 0.0, 0.0], float(rng.uniform(0.0, 2.0 * math.pi)))
        agree += label_field(config, field).label == label_field(config, rotated).label
    return agree >= 0.99 * pairs, f"{agree}/{pairs} label pairs agree"


def check_smo_oracle(rng, instances: int = 50) -> Tuple[bool, str]:
    worst = 0.0
    for _ in range(instances):
        config = TrainConfig(C=float(rng.choice([0.5, 1.0, 10.0])), kkt_tol=1e-9)
        n = int(rng.integers(4, 16))
        gram = random_pd_gram(rng, n)
        y = np.where(rng.random(n) < 0.5, -1, 1)
        y[0], y[1] = 1, -1
        smo = train(gram, y, config)
        oracle = qp_oracle_small(gram, y, config.C)
        worst = max(worst, abs(smo.objective - oracle.objective))
    return worst <= 1e-6, f"{instances} instances, max objective gap {worst:.2e}"


def check_trotter_convergence(rng) -> Tuple[bool, str]:
    """Inversion-test entry at n = 1000 and the 1/n error law of the Trotterised state."""
    config = SystemConfig(n_qubits=2, alpha=0.5)
    psi0 = manifold_states(config)[1]
    f_m = FieldVector(h=0.6, theta=1.5 * math.pi, phi=0.5 * math.pi)
    f_mp = FieldVector(h=0.6, theta=1.3 * math.pi, phi=0.5 * math.pi)

    def exact(field: FieldVector) -> np.ndarray:
        u = scipy.linalg.expm(-1j * build_hamiltonian(config, field).matrix * 1.0)
        return u @ psi0.amplitudes

    target = abs(np.vdot(exact(f_m), exact(f_mp))) ** 2
    entry = inversion_test_overlap(config, f_m, 1.0, f_mp, 1.0, 1000)
    gap = abs(entry - target)

    ns = np.array([4, 8, 16, 32, 64, 128, 256])
    ref = exact(f_m)
    dist = []
    for n in ns:
        approx = trotter_propagate(config, f_m, 1.0, int(n)).amplitudes
        dist.append(math.sqrt(max(1.0 - abs(np.vdot(ref, approx)) ** 2, 0.0)))
    slope = -float(np.polyfit(np.log(ns), np.log(dist), 1)[0])
    return gap < 1e-3 and abs(slope - 1.0) <= 0.2, f"|entry - exact| = {gap:.2e}, slope {slope:.3f}"


def check_dt_refinement(rng, fields: int = 20) -> Tuple[bool, str]:
    """Labels must not change when the sampling step is halved."""
    coarse = SystemConfig(n_qubits=2, alpha=0.5)
    fine = coarse.model_copy(update={"dt": coarse.dt / 2.0})
    flips = 0
    for _ in range(fields):
        field = random_field(rng, 0.6, 1.5)
        flips += label_field(coarse, field).label != label_field(fine, field).label
    return flips == 0, f"{flips}/{fields} labels changed under dt/2"


CHECKS: List[Tuple[str, CheckFn, bool]] = [
    ("ground_energy_law", check_ground_energy_law, False),
    ("hamiltonian_hermitian", check_hamiltonian_hermitian, False),
    ("parity_symmetry", check_parity_symmetry, False),
    ("reference_labels", check_reference_labels, False),
    ("closed_norm", check_closed_norm, False),
    ("lindblad_physicality", check_lindblad_physicality, True),
    ("mixed_pure_consistency", check_mixed_pure_consistency, False),
    ("gram_invariants", check_gram_invariants, True),
    ("smo_oracle", check_smo_oracle, False),
    ("trotter_convergence", check_trotter_convergence, False),
    ("rotation_symmetry", check_rotation_symmetry, True),
    ("dt_refinement", check_dt_refinement, True),
]


def run_checks(
    names: Optional[Sequence[str]] = None,
    include_slow: bool = True,
    seed: int = 0,
) -> List[CheckResult]:
    """
    Run every registered check (or the named subset) and report each one.

    A check that raises is reported as failed with the error.
    """
    results = []
    for name, fn, slow in CHECKS:
        if names is not None and name not in names:
            continue
        if slow and not include_slow and names is None:
            continue
        started = time.time()
        try:
            passed, detail = fn(np.random.default_rng(seed))
        except (QuenchError, AssertionError, ArithmeticError, ValueError) as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name=name, passed=bool(passed), detail=detail, seconds=time.time() - started))
    return results
