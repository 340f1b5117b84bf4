"""Rate functions, P+/P- crossing detection and quench labelling."""
import math
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import bisect

from dynamics import (
    Trajectory,
    evolve_closed,
    evolve_driven,
    evolve_lindblad,
    expectation_series,
    integrator_dt,
)
from models import (
    DriveSpec,
    FieldVector,
    HermitianOperator,
    Mode,
    NoiseSpec,
    ProbabilityPair,
    PureState,
    SingularityReport,
    SystemConfig,
    TimeGrid,
    n_qubits_for_dim,
)
from spin_model import build_hamiltonian, build_observable, eigensystem, manifold_states
from validation import DimensionMismatch, InvariantValidator, ValidationError


LOG_FLOOR = 1e-300
CROSSING_TOL = 1e-6

Extras = Optional[Union[DriveSpec, NoiseSpec]]


def ground_probabilities(trajectory: Trajectory, g_plus: PureState, g_minus: PureState) -> ProbabilityPair:
    """P_eta(t) = |<G_eta|psi(t)>|^2, or <G_eta|rho(t)|G_eta> for mixed trajectories."""
    if g_plus.dim != trajectory.dim or g_minus.dim != trajectory.dim:
        raise DimensionMismatch(f"manifold dim {g_plus.dim} vs trajectory dim {trajectory.dim}")
    if trajectory.is_mixed:
        tol = 1e-6
        probs = [
            InvariantValidator.real_part(
                np.einsum("i,tij,j->t", g.amplitudes.conj(), trajectory.states, g.amplitudes),
                tol=1e-9,
                what="ground probability",
            )
            for g in (g_plus, g_minus)
        ]
    else:
        tol = 1e-9
        probs = [np.abs(trajectory.states @ g.amplitudes.conj()) ** 2 for g in (g_plus, g_minus)]
    p_plus, p_minus = (InvariantValidator.clamp_unit(p, tol, "ground probability") for p in probs)
    return ProbabilityPair(
        grid=trajectory.grid,
        p_plus=p_plus,
        p_minus=p_minus,
        n_qubits=n_qubits_for_dim(trajectory.dim),
    )


def rate_function(pair: ProbabilityPair, n_qubits: Optional[int] = None) -> np.ndarray:
    """lambda(t) = -(1/N) log max(P_+, P_-)."""
    n = n_qubits if n_qubits is not None else pair.n_qubits
    if n < 1:
        raise ValidationError("rate_function needs N >= 1")
    best = np.maximum(np.maximum(pair.p_plus, pair.p_minus), LOG_FLOOR)
    return -np.log(best) / n


def probability_evaluator(
    hamiltonian: HermitianOperator,
    psi0: PureState,
    g_plus: PureState,
    g_minus: PureState,
) -> Callable[[float], float]:
    """Exact P_+(t) - P_-(t) at arbitrary t for time-independent evolution."""
    evals, evecs = eigensystem(hamiltonian.matrix)
    coeffs = evecs.conj().T @ psi0.amplitudes
    row_plus = g_plus.amplitudes.conj() @ evecs
    row_minus = g_minus.amplitudes.conj() @ evecs

    def difference(t: float) -> float:
        amps = np.exp(-1j * evals * t) * coeffs
        return float(abs(row_plus @ amps) ** 2 - abs(row_minus @ amps) ** 2)

    return difference


def _local_spline(times: np.ndarray, values: np.ndarray, lo: int, hi: int) -> Callable[[float], float]:
    start, stop = max(lo - 3, 0), min(hi + 4, times.size)
    spline = CubicSpline(times[start:stop], values[start:stop])
    return lambda t: float(spline(t))


def detect_crossings(
    pair: ProbabilityPair,
    tol: float = CROSSING_TOL,
    evaluator: Optional[Callable[[float], float]] = None,
) -> SingularityReport:
    """
    Scan f(t) = P_+(t) - P_-(t) for strict sign changes.

    Samples with |f| <= tol carry no sign, so a tangential touch is never a
    crossing. Each bracket is refined by bisection on `evaluator` (exact
    dynamics) or on a local cubic spline of the samples, to a time accuracy
    well below dt/100.
    """
    times = pair.grid.times
    f = pair.p_plus - pair.p_minus
    signs = np.where(f > tol, 1, np.where(f < -tol, -1, 0))
    signed = np.flatnonzero(signs)
    brackets = [
        (int(a), int(b)) for a, b in zip(signed[:-1], signed[1:]) if signs[a] != signs[b]
    ]
    if not brackets:
        return SingularityReport(label=-1)

    xtol = pair.grid.dt * 1e-6
    slope = np.gradient(f, times)
    crossing_times, kink_jumps = [], []
    for a, b in brackets:
        func = evaluator if evaluator is not None else _local_spline(times, f, a, b)
        root = float(bisect(func, times[a], times[b], xtol=xtol))
        p_at = 0.5 * (np.interp(root, times, pair.p_plus) + np.interp(root, times, pair.p_minus))
        jump = -float(np.interp(root, times, slope)) / (pair.n_qubits * max(p_at, LOG_FLOOR))
        crossing_times.append(root)
        kink_jumps.append(jump)
    return SingularityReport(label=1, crossing_times=crossing_times, kink_jumps=kink_jumps)


def default_window(j_coupling: float, h: float, d_crit: float = 1.0, dt: float = 1e-2) -> TimeGrid:
    """T = 100 (pi/4 + d_crit (J/h)^2) / J sampled every dt (ceil)."""
    if not h > 0:
        raise ValidationError(f"default_window needs h > 0, got {h}")
    t_end = 100.0 * (math.pi / 4.0 + d_crit * (j_coupling / h) ** 2) / j_coupling
    return TimeGrid(t_end=t_end, n_steps=max(2, math.ceil(t_end / dt)))


def labelling_window(config: SystemConfig, field: FieldVector, mode: Mode, extras: Extras = None) -> TimeGrid:
    drive = extras if mode == "driven" else None
    dt = integrator_dt(field, drive, config.dt)
    return default_window(config.j_coupling, field.h, config.d_crit, dt)


def critical_time(trajectory: Trajectory, config: SystemConfig) -> Tuple[float, float]:
    """Earliest time at which <M_x> attains its maximum over the window."""
    m_x = expectation_series(trajectory, build_observable(config.n_qubits, "magnetization_x"))
    peak = float(m_x.max())
    index = int(np.flatnonzero(m_x >= peak - 1e-12)[0])
    return float(trajectory.grid.times[index]), float(m_x[index])


def _require_extras(mode: Mode, extras: Extras):
    if mode == "driven" and not isinstance(extras, DriveSpec):
        raise ValidationError("driven mode requires a DriveSpec")
    if mode == "open" and not isinstance(extras, NoiseSpec):
        raise ValidationError("open mode requires a NoiseSpec")


def quench_trajectory(
    config: SystemConfig,
    field: FieldVector,
    mode: Mode,
    extras: Extras = None,
    grid: Optional[TimeGrid] = None,
) -> Trajectory:
    """Evolve |G_minus> (or its projector) after switching on `field`."""
    _require_extras(mode, extras)
    if grid is None:
        grid = labelling_window(config, field, mode, extras)
    g_minus = manifold_states(config)[1]
    if mode == "closed":
        return evolve_closed(build_hamiltonian(config, field), g_minus, grid)
    if mode == "driven":
        return evolve_driven(config, field, extras, g_minus, grid)
    return evolve_lindblad(config, field, extras, g_minus.projector(), grid)


def label_field(
    config: SystemConfig,
    field: FieldVector,
    mode: Mode = "closed",
    extras: Extras = None,
) -> SingularityReport:
    """+1 if the quench produces at least one P_+/P_- crossing inside the window."""
    _require_extras(mode, extras)
    if field.h == 0.0:
        return SingularityReport(label=-1)
    g_plus, g_minus = manifold_states(config)
    trajectory = quench_trajectory(config, field, mode, extras)
    pair = ground_probabilities(trajectory, g_plus, g_minus)
    evaluator = None
    if mode == "closed":
        evaluator = probability_evaluator(build_hamiltonian(config, field), g_minus, g_plus, g_minus)
    return detect_crossings(pair, CROSSING_TOL, evaluator)


def trace_table(
    config: SystemConfig,
    field: FieldVector,
    mode: Mode = "closed",
    extras: Extras = None,
    grid: Optional[TimeGrid] = None,
) -> Dict[str, np.ndarray]:
    """Columns t, P_plus, P_minus, lambda, m_x for one quench."""
    g_plus, g_minus = manifold_states(config)
    trajectory = quench_trajectory(config, field, mode, extras, grid)
    pair = ground_probabilities(trajectory, g_plus, g_minus)
    m_x = expectation_series(trajectory, build_observable(config.n_qubits, "magnetization_x"))
    return {
        "t": trajectory.grid.times,
        "P_plus": pair.p_plus,
        "P_minus": pair.p_minus,
        "lambda": rate_function(pair),
        "m_x": m_x,
    }
