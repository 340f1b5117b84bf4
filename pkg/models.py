"""Data models for the quench-kernel classifier."""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from validation import DimensionMismatch, InvariantValidator, ValidationError


GroundConvention = Literal["x-polarized", "y-polarized"]
# Accepted spellings that name the same product state.
CONVENTION_ALIASES = {"paper-literal": "y-polarized"}
Mode = Literal["closed", "driven", "open"]
Channel = Literal["spontaneous_emission", "phase_damping"]
KernelMethod = Literal["GSK", "DSK", "classical_rbf"]
KernelMap = Literal["qlin", "qrbf"]
ObservableKind = Literal["parity", "magnetization_x", "magnetization_y", "magnetization_z"]

TWO_PI = 2.0 * math.pi


class SystemConfig(BaseModel):
    """Physical and numerical parameters of one simulated system."""
    model_config = ConfigDict(frozen=True)

    n_qubits: int = Field(..., ge=2, le=12, description="Number of qubits N")
    alpha: float = Field(..., gt=0, description="Power-law exponent of the couplings")
    j_coupling: float = Field(default=1.0, gt=0, description="Coupling energy J (energy unit)")
    ground_convention: GroundConvention = Field(
        default="x-polarized",
        description="Product-state convention for the two ground-manifold states",
    )
    seed: int = Field(default=0, description="RNG seed for anything stochastic downstream")
    d_crit: float = Field(default=1.0, ge=0, description="Window constant in pi/4 + d_crit (J/h)^2")
    dt: float = Field(default=1e-2, gt=0, description="Base time step, units of 1/J")

    @field_validator("ground_convention", mode="before")
    @classmethod
    def normalize_convention(cls, v):
        return CONVENTION_ALIASES.get(v, v) if isinstance(v, str) else v


class FieldVector(BaseModel):
    """External magnetic field in spherical coordinates (theta azimuthal, phi polar)."""
    model_config = ConfigDict(frozen=True)

    h: float = Field(..., ge=0, description="Field magnitude in units of J")
    theta: float = Field(default=0.0, ge=0, le=TWO_PI)
    phi: float = Field(default=0.0, ge=0, le=math.pi)

    @property
    def cartesian(self) -> np.ndarray:
        s = math.sin(self.phi)
        return np.array([
            self.h * s * math.cos(self.theta),
            self.h * s * math.sin(self.theta),
            self.h * math.cos(self.phi),
        ])

    @classmethod
    def from_cartesian(cls, vec) -> "FieldVector":
        """Inverse of `cartesian`; theta is folded into [0, 2pi)."""
        hx, hy, hz = (float(v) for v in vec)
        h = math.sqrt(hx * hx + hy * hy + hz * hz)
        if h == 0.0:
            return cls(h=0.0)
        phi = math.acos(max(-1.0, min(1.0, hz / h)))
        theta = math.atan2(hy, hx) % TWO_PI
        return cls(h=h, theta=theta, phi=phi)


class TimeGrid(BaseModel):
    """Uniform grid on [0, t_end] with n_steps intervals."""
    model_config = ConfigDict(frozen=True)

    t_end: float = Field(..., gt=0, description="Window length T in units of 1/J")
    n_steps: int = Field(..., ge=2, description="Number of intervals")

    @property
    def t_start(self) -> float:
        return 0.0

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)


class DriveSpec(BaseModel):
    """Longitudinal drive B_z(t) = amplitude * sin(frequency * t)."""
    model_config = ConfigDict(frozen=True)

    amplitude: float = Field(..., ge=0, description="B_z0 in units of J")
    frequency: float = Field(..., description="Angular frequency in units of J")

    @field_validator("amplitude", "frequency")
    @classmethod
    def validate_finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("Drive parameters must be finite")
        return v


class NoiseSpec(BaseModel):
    """Uniform Markovian channel, one jump operator per qubit."""
    model_config = ConfigDict(frozen=True)

    channel: Channel = Field(default="spontaneous_emission")
    rate: float = Field(..., ge=0, description="gamma in units of J")


class KernelSpec(BaseModel):
    """How kernel states are built and how their inner products are mapped."""
    model_config = ConfigDict(frozen=True)

    method: KernelMethod = Field(default="GSK")
    map: KernelMap = Field(default="qrbf")
    gamma: Optional[float] = Field(default=None, gt=0, description="qrbf width (quantum methods only)")
    gamma_c: Optional[float] = Field(default=None, ge=0, description="classical RBF width")
    mode: Mode = Field(default="closed")

    @model_validator(mode="after")
    def validate_pairing(self):
        """gamma travels with qrbf; the classical baseline needs gamma_c."""
        if self.method == "classical_rbf":
            if self.gamma_c is None:
                raise ValueError("classical_rbf requires gamma_c")
            if self.gamma is not None:
                raise ValueError("classical_rbf takes gamma_c, not gamma")
            return self
        if self.map == "qrbf" and self.gamma is None:
            raise ValueError("qrbf map requires gamma")
        if self.map == "qlin" and self.gamma is not None:
            raise ValueError("gamma is only meaningful for the qrbf map")
        return self

    @classmethod
    def default_for(cls, method: KernelMethod, mode: Mode = "closed") -> "KernelSpec":
        """Best-performing pairings: GSK with qrbf(1), DSK with qlin."""
        if method == "GSK":
            return cls(method="GSK", map="qrbf", gamma=1.0, mode=mode)
        if method == "DSK":
            return cls(method="DSK", map="qlin", mode=mode)
        return cls(method="classical_rbf", map="qlin", gamma_c=1.0, mode=mode)

    def with_width(self, width: Optional[float]) -> "KernelSpec":
        """Same spec with the tunable width replaced (no-op for qlin)."""
        if self.method == "classical_rbf":
            return self.model_copy(update={"gamma_c": width})
        if self.map == "qrbf":
            return self.model_copy(update={"gamma": width})
        return self


class TrainConfig(BaseModel):
    """Soft-margin SVM training settings."""
    model_config = ConfigDict(frozen=True)

    C: float = Field(default=10.0, gt=0, description="Slack penalty (equivalent to 1/(2M lambda))")
    kkt_tol: float = Field(default=1e-3, gt=0)
    max_passes: int = Field(default=200_000, ge=1, description="Cap on SMO pair updates")
    seed: int = Field(default=0)
    debug: bool = Field(default=False, description="Assert dual-objective monotonicity")


class FeatureRow(BaseModel):
    """One field orientation/magnitude with its (optional) label."""
    model_config = ConfigDict(frozen=True)

    theta: float = Field(..., ge=0, le=TWO_PI)
    phi: float = Field(..., ge=0, le=math.pi)
    h: float = Field(..., ge=0)
    label: Optional[Literal[1, -1]] = None

    @property
    def field_vector(self) -> FieldVector:
        return FieldVector(h=self.h, theta=self.theta, phi=self.phi)

    @property
    def key(self) -> tuple:
        return (self.theta, self.phi, self.h)


class GridSpec(BaseModel):
    """Feature grid: a single magnitude or a list of magnitudes."""
    model_config = ConfigDict(frozen=True)

    h: Optional[float] = Field(default=None, ge=0)
    h_values: Optional[List[float]] = None
    n_theta: int = Field(default=100, ge=2)
    n_phi: int = Field(default=100, ge=2)

    @model_validator(mode="after")
    def validate_magnitudes(self):
        if (self.h is None) == (self.h_values is None):
            raise ValueError("Give exactly one of 'h' or 'h_values'")
        if self.h_values is not None:
            if not self.h_values or any(v <= 0 for v in self.h_values):
                raise ValueError("h_values must be non-empty and strictly positive")
        return self


class RunConfig(BaseModel):
    """Scenario file: system, quench mode, grid and split settings."""
    model_config = ConfigDict(frozen=True)

    system: SystemConfig
    mode: Mode = "closed"
    drive: Optional[DriveSpec] = None
    noise: Optional[NoiseSpec] = None
    grid: GridSpec = Field(default_factory=lambda: GridSpec(h=1.0))
    train_fraction: float = Field(default=0.7, gt=0, lt=1)
    split_seed: int = 0
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def validate_mode_extras(self):
        """A driven run needs a drive, an open run needs a channel."""
        if self.mode == "driven" and self.drive is None:
            raise ValueError("mode 'driven' requires a 'drive' section")
        if self.mode == "open" and self.noise is None:
            raise ValueError("mode 'open' requires a 'noise' section")
        return self

    @property
    def extras(self):
        if self.mode == "driven":
            return self.drive
        if self.mode == "open":
            return self.noise
        return None


class RowFailure(BaseModel):
    index: int
    error: str
    message: str


class DatasetMeta(BaseModel):
    """Provenance needed to regenerate a labelled dataset."""
    run: RunConfig
    generation_seed: int = 0
    created: str = ""
    failures: List[RowFailure] = Field(default_factory=list)


class SingularityReport(BaseModel):
    """Outcome of the crossing scan for one quench."""
    label: Literal[1, -1]
    crossing_times: List[float] = Field(default_factory=list)
    kink_jumps: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_consistency(self):
        if (self.label == 1) != bool(self.crossing_times):
            raise ValueError("label must be +1 exactly when crossings were found")
        if len(self.kink_jumps) != len(self.crossing_times):
            raise ValueError("one kink jump per crossing time is required")
        return self


class RunManifest(BaseModel):
    """Everything needed to rerun the command that produced an artifact."""
    command: str
    argv: List[str]
    config_paths: List[str] = Field(default_factory=list)
    inputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    outputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    seed: Optional[int] = None
    workers: int = 1
    wall_clock_seconds: float = 0.0
    tool_version: str = ""
    started_at: str = ""
    summary: Dict[str, Any] = Field(default_factory=dict)


# Array-carrying records. Arrays are made read-only so values can be shared
# across workers without copies.

def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CouplingMatrix:
    entries: np.ndarray
    kac_norm: float

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze(self.entries))

    @property
    def n_qubits(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class HermitianOperator:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        InvariantValidator.check_hermitian(m, tol=1e-12)
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_qubits(self) -> int:
        return n_qubits_for_dim(self.dim)


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.amplitudes, dtype=complex)
        InvariantValidator.check_normalized(v, tol=1e-10)
        object.__setattr__(self, "amplitudes", _freeze(v))

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def projector(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True)
class DensityOperator:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        InvariantValidator.check_density(m, herm_tol=1e-8, trace_tol=1e-6, psd_tol=1e-6)
        object.__setattr__(self, "matrix", _freeze(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PureTrajectory:
    grid: TimeGrid
    states: np.ndarray
    norm_drift: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise DimensionMismatch(
                f"{self.states.shape[0]} states for a grid of {self.grid.n_steps + 1} points"
            )
        object.__setattr__(self, "states", _freeze(self.states))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def is_mixed(self) -> bool:
        return False

    def state_at(self, index: int) -> PureState:
        return PureState(self.states[index])


@dataclass(frozen=True)
class MixedTrajectory:
    grid: TimeGrid
    states: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.grid.n_steps + 1:
            raise DimensionMismatch(
                f"{self.states.shape[0]} states for a grid of {self.grid.n_steps + 1} points"
            )
        object.__setattr__(self, "states", _freeze(self.states))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def is_mixed(self) -> bool:
        return True

    def state_at(self, index: int) -> DensityOperator:
        return DensityOperator(self.states[index])


@dataclass(frozen=True)
class ProbabilityPair:
    grid: TimeGrid
    p_plus: np.ndarray
    p_minus: np.ndarray
    n_qubits: int

    def __post_init__(self):
        object.__setattr__(self, "p_plus", _freeze(self.p_plus))
        object.__setattr__(self, "p_minus", _freeze(self.p_minus))


@dataclass(frozen=True)
class GramMatrix:
    """Kernel matrix over a dataset.

    `base` holds the raw pairwise quantity (quantum inner product I, or the
    squared feature distance for the classical baseline); `values` applies
    the kernel map and pins the diagonal to 1.
    """
    base: np.ndarray
    spec: KernelSpec
    dataset_fingerprint: str
    min_eigenvalue: float = 0.0
    flagged: List[int] = field(default_factory=list)

    def __post_init__(self):
        object.__setattr__(self, "base", _freeze(self.base))

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def values(self) -> np.ndarray:
        from kernels import apply_map
        return apply_map(self.base, self.spec, unit_diagonal=True)


@dataclass(frozen=True)
class SvmModel:
    support_indices: np.ndarray
    support_coeffs: np.ndarray
    support_labels: np.ndarray
    bias: float
    upper_bound: float
    n_train: int
    spec: Optional[KernelSpec] = None
    train_config: Optional[TrainConfig] = None
    train_indices: Optional[np.ndarray] = None
    dataset_fingerprint: str = ""
    gram_fingerprint: str = ""
    converged: bool = True
    iterations: int = 0
    objective: float = 0.0

    @property
    def dual_coeffs(self) -> np.ndarray:
        """Dense coefficient vector over the training points."""
        c = np.zeros(self.n_train)
        c[self.support_indices] = self.support_coeffs
        return c


@dataclass
class LabeledDataset:
    rows: List[FeatureRow]
    meta: DatasetMeta

    def __post_init__(self):
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValidationError("Dataset contains duplicate (theta, phi, h) rows")

    def labeled_indices(self) -> List[int]:
        return [i for i, r in enumerate(self.rows) if r.label is not None]

    def labeled(self) -> "LabeledDataset":
        """Rows with a label; failed rows are never used for training."""
        return LabeledDataset([self.rows[i] for i in self.labeled_indices()], self.meta)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label if r.label is not None else 0 for r in self.rows], dtype=int)

    def __len__(self) -> int:
        return len(self.rows)


def n_qubits_for_dim(dim: int) -> int:
    n = int(round(math.log2(dim)))
    if 2 ** n != dim:
        raise DimensionMismatch(f"Dimension {dim} is not a power of two")
    return n
