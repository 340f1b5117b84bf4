"""Closed, driven and Lindblad propagation of qubit states, plus a Trotterised propagator."""
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from models import (
    DensityOperator,
    DriveSpec,
    FieldVector,
    HermitianOperator,
    MixedTrajectory,
    NoiseSpec,
    PureState,
    PureTrajectory,
    SystemConfig,
    TimeGrid,
)
from spin_model import (
    PAULI,
    build_hamiltonian,
    coupling_matrix,
    eigensystem,
    kron_all,
    manifold_states,
    site_operator,
    total_sigma,
)
from validation import (
    DimensionMismatch,
    InvariantValidator,
    PositivityViolation,
    StepSizeTooCoarse,
    ValidationError,
)


NORM_DRIFT_LIMIT = 1e-6
POSITIVITY_LIMIT = 1e-4
# Largest Liouvillian (d^2 x d^2) for which the RK4 step is precomputed as a matrix.
SUPEROPERATOR_MAX_DIM = 1024

Trajectory = Union[PureTrajectory, MixedTrajectory]


def make_grid(t_end: float, n_steps: int) -> TimeGrid:
    if n_steps < 2:
        raise ValidationError(f"A time grid needs at least 2 steps, got {n_steps}")
    if not t_end > 0:
        raise ValidationError(f"t_end must be positive, got {t_end}")
    return TimeGrid(t_end=t_end, n_steps=n_steps)


def integrator_dt(field: FieldVector, drive: Optional[DriveSpec] = None, base_dt: float = 1e-2) -> float:
    """min(base_dt, 0.05 / h_total), h_total bounding the instantaneous field."""
    h_total = field.h + (drive.amplitude if drive is not None else 0.0)
    if h_total <= 0:
        return base_dt
    return min(base_dt, 0.05 / h_total)


def evolve_closed(hamiltonian: HermitianOperator, psi0: PureState, grid: TimeGrid) -> PureTrajectory:
    """psi(t) = V exp(-i Lambda t) V^dagger psi(0) from a single diagonalisation."""
    if psi0.dim != hamiltonian.dim:
        raise DimensionMismatch(f"state dim {psi0.dim} vs operator dim {hamiltonian.dim}")
    evals, evecs = eigensystem(hamiltonian.matrix)
    coeffs = evecs.conj().T @ psi0.amplitudes
    phases = np.exp(-1j * np.outer(grid.times, evals))
    states = (phases * coeffs) @ evecs.T
    states[0] = psi0.amplitudes
    return PureTrajectory(grid=grid, states=states)


def evolve_driven(
    config: SystemConfig,
    field: FieldVector,
    drive: DriveSpec,
    psi0: PureState,
    grid: TimeGrid,
) -> PureTrajectory:
    """
    Classical RK4 on i dpsi/dt = H(t) psi with per-step renormalisation.

    The pre-renormalisation norm drift of every step is kept on the
    trajectory as a diagnostic.

    Raises:
        StepSizeTooCoarse: A step drifted the norm by more than 1e-6
    """
    gen_static = -1j * build_hamiltonian(config, field).matrix
    gen_drive = -1j * total_sigma("z", config.n_qubits)
    if psi0.dim != gen_static.shape[0]:
        raise DimensionMismatch(f"state dim {psi0.dim} vs operator dim {gen_static.shape[0]}")
    amp, omega = drive.amplitude, drive.frequency
    dt = grid.dt

    def rhs(t: float, psi: np.ndarray) -> np.ndarray:
        return gen_static @ psi + (amp * np.sin(omega * t)) * (gen_drive @ psi)

    times = grid.times
    states = np.empty((times.size, psi0.dim), dtype=complex)
    drift = np.empty(grid.n_steps)
    psi = np.array(psi0.amplitudes)
    states[0] = psi
    for step in range(grid.n_steps):
        t = times[step]
        k1 = rhs(t, psi)
        k2 = rhs(t + 0.5 * dt, psi + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, psi + 0.5 * dt * k2)
        k4 = rhs(t + dt, psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm = np.linalg.norm(psi)
        drift[step] = abs(norm - 1.0)
        if drift[step] > NORM_DRIFT_LIMIT:
            raise StepSizeTooCoarse(
                f"norm drift {drift[step]:.2e} at t={t + dt:.4f} with dt={dt:.2e}"
            )
        psi = psi / norm
        states[step + 1] = psi
    return PureTrajectory(grid=grid, states=states, norm_drift=drift)


def jump_operators(n_qubits: int, noise: NoiseSpec) -> List[Tuple[float, np.ndarray]]:
    """One (rate, L_k) per qubit: sigma_x - i sigma_y (= 2 sigma^-) or sigma_z."""
    ops = []
    for k in range(n_qubits):
        if noise.channel == "spontaneous_emission":
            op = site_operator("x", k, n_qubits) - 1j * site_operator("y", k, n_qubits)
        else:
            op = np.array(site_operator("z", k, n_qubits))
        ops.append((noise.rate, op))
    return ops


def lindblad_rhs(hamiltonian: np.ndarray, rho: np.ndarray, jumps: List[Tuple[float, np.ndarray]]) -> np.ndarray:
    drho = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for rate, op in jumps:
        if rate == 0.0:
            continue
        op_dag = op.conj().T
        decay = op_dag @ op
        drho += rate * (op @ rho @ op_dag - 0.5 * (decay @ rho + rho @ decay))
    return drho


def liouvillian(hamiltonian: np.ndarray, jumps: List[Tuple[float, np.ndarray]]) -> np.ndarray:
    """Superoperator acting on row-major vec(rho): vec(A rho B) = (A kron B^T) vec(rho)."""
    dim = hamiltonian.shape[0]
    eye = np.eye(dim)
    sup = -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))
    for rate, op in jumps:
        if rate == 0.0:
            continue
        decay = op.conj().T @ op
        sup += rate * (np.kron(op, op.conj()) - 0.5 * np.kron(decay, eye) - 0.5 * np.kron(eye, decay.T))
    return sup


def _rk4_step_matrix(generator: np.ndarray, dt: float) -> np.ndarray:
    # RK4 on a linear autonomous ODE is the 4th-order Taylor polynomial of exp(A dt).
    a = generator * dt
    a2 = a @ a
    a3 = a2 @ a
    return np.eye(a.shape[0]) + a + a2 / 2.0 + a3 / 6.0 + (a3 @ a) / 24.0


def evolve_lindblad(
    config: SystemConfig,
    field: FieldVector,
    noise: NoiseSpec,
    rho0: DensityOperator,
    grid: TimeGrid,
    use_superoperator: Optional[bool] = None,
) -> MixedTrajectory:
    """
    RK4 integration of the Lindblad master equation with uniform per-qubit rates.

    rho is re-symmetrised, (rho + rho^dagger)/2, after every step; the trace is
    left to the integrator.

    Raises:
        PositivityViolation: Some rho(t) has an eigenvalue below -1e-4
    """
    hamiltonian = build_hamiltonian(config, field).matrix
    dim = hamiltonian.shape[0]
    if rho0.dim != dim:
        raise DimensionMismatch(f"density dim {rho0.dim} vs operator dim {dim}")
    jumps = jump_operators(config.n_qubits, noise)
    dt = grid.dt
    if use_superoperator is None:
        use_superoperator = dim * dim <= SUPEROPERATOR_MAX_DIM

    states = np.empty((grid.n_steps + 1, dim, dim), dtype=complex)
    rho = np.array(rho0.matrix)
    states[0] = rho
    if use_superoperator:
        step_matrix = _rk4_step_matrix(liouvillian(hamiltonian, jumps), dt)
        for step in range(grid.n_steps):
            rho = (step_matrix @ rho.reshape(-1)).reshape(dim, dim)
            rho = 0.5 * (rho + rho.conj().T)
            states[step + 1] = rho
    else:
        for step in range(grid.n_steps):
            k1 = lindblad_rhs(hamiltonian, rho, jumps)
            k2 = lindblad_rhs(hamiltonian, rho + 0.5 * dt * k1, jumps)
            k3 = lindblad_rhs(hamiltonian, rho + 0.5 * dt * k2, jumps)
            k4 = lindblad_rhs(hamiltonian, rho + dt * k3, jumps)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
            states[step + 1] = rho

    min_eig = float(np.linalg.eigvalsh(states).min())
    if min_eig < -POSITIVITY_LIMIT:
        raise PositivityViolation(
            f"min eigenvalue {min_eig:.2e} along the trajectory; reduce dt (now {dt:.2e})"
        )
    return MixedTrajectory(grid=grid, states=states)


def _rotation(pauli: np.ndarray, angle: float) -> np.ndarray:
    """R_sigma(angle) = exp(-i angle sigma / 2) for any involutory sigma."""
    eye = np.eye(pauli.shape[0])
    return np.cos(angle / 2.0) * eye - 1j * np.sin(angle / 2.0) * pauli


def trotter_step(config: SystemConfig, field: FieldVector, t: float, n_steps_trotter: int) -> np.ndarray:
    """One first-order step [prod_{i != j} R_XX(-2 J_ij t/n)] [prod_i R_X R_Y R_Z]."""
    n = config.n_qubits
    tau = t / n_steps_trotter
    couplings = coupling_matrix(n, config.alpha, config.j_coupling).entries

    interaction = np.eye(2 ** n, dtype=complex)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            xx = site_operator("x", i, n) @ site_operator("x", j, n)
            interaction = interaction @ _rotation(xx, -2.0 * couplings[i, j] * tau)

    hx, hy, hz = field.cartesian
    single = (
        _rotation(PAULI["x"], -2.0 * hx * tau)
        @ _rotation(PAULI["y"], -2.0 * hy * tau)
        @ _rotation(PAULI["z"], -2.0 * hz * tau)
    )
    return interaction @ kron_all([single] * n)


def trotter_propagate(
    config: SystemConfig,
    field: FieldVector,
    t: float,
    n_steps_trotter: int,
    psi0: Optional[PureState] = None,
) -> PureState:
    """Apply n first-order Trotter steps to psi0 (default |G_minus>)."""
    if n_steps_trotter < 1:
        raise ValidationError(f"n_steps_trotter must be >= 1, got {n_steps_trotter}")
    if psi0 is None:
        psi0 = manifold_states(config)[1]
    step = trotter_step(config, field, t, n_steps_trotter)
    psi = np.linalg.matrix_power(step, n_steps_trotter) @ psi0.amplitudes
    return PureState(psi / np.linalg.norm(psi))


def inversion_test_overlap(
    config: SystemConfig,
    field_m: FieldVector,
    t_m: float,
    field_mp: FieldVector,
    t_mp: float,
    n_steps_trotter: int,
    psi_init: Optional[PureState] = None,
) -> float:
    """|<psi| U^dagger(h_m, t_m) U(h_m', t_m') |psi>|^2 with Trotterised propagators."""
    if psi_init is None:
        psi_init = manifold_states(config)[1]
    a = trotter_propagate(config, field_m, t_m, n_steps_trotter, psi_init).amplitudes
    b = trotter_propagate(config, field_mp, t_mp, n_steps_trotter, psi_init).amplitudes
    return float(min(1.0, abs(np.vdot(a, b)) ** 2))


def expectation_series(trajectory: Trajectory, observable: HermitianOperator) -> np.ndarray:
    """<psi(t)|A|psi(t)> or Tr(A rho(t)) per grid point."""
    if observable.dim != trajectory.dim:
        raise DimensionMismatch(f"observable dim {observable.dim} vs state dim {trajectory.dim}")
    a = observable.matrix
    states = trajectory.states
    if trajectory.is_mixed:
        values = np.einsum("ij,tji->t", a, states)
    else:
        values = np.einsum("ti,ti->t", states.conj(), states @ a.T)
    return InvariantValidator.real_part(values, tol=1e-9, what="expectation")


def loschmidt_echo(trajectory: Trajectory, psi0: PureState) -> np.ndarray:
    """Return probability to the initial state, |<psi0|psi(t)>|^2 or <psi0|rho(t)|psi0>."""
    if psi0.dim != trajectory.dim:
        raise DimensionMismatch(f"state dim {psi0.dim} vs trajectory dim {trajectory.dim}")
    ref = psi0.amplitudes
    if trajectory.is_mixed:
        values = np.einsum("i,tij,j->t", ref.conj(), trajectory.states, ref)
        return InvariantValidator.real_part(values, tol=1e-9, what="loschmidt echo")
    return np.abs(trajectory.states @ ref.conj()) ** 2


TRACE_COLUMNS = ["t", "P_plus", "P_minus", "lambda", "m_x"]


def write_trace_csv(path, columns: Dict[str, np.ndarray]) -> None:
    """One row per grid point, 17 significant digits."""
    missing = [c for c in TRACE_COLUMNS if c not in columns]
    if missing:
        raise ValidationError(f"trace columns missing: {missing}")
    frame = pd.DataFrame({c: np.asarray(columns[c], dtype=float) for c in TRACE_COLUMNS})
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
