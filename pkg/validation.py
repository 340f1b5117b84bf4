"""Error types and numerical guardrails shared by all modules."""
import numpy as np


class QuenchError(Exception):
    """Root of every error raised by this package."""
    exit_code = 2


class ValidationError(QuenchError):
    """Raised when an input, file or configuration is rejected."""
    exit_code = 1


class NumericalError(QuenchError):
    """Raised when a numerical contract is violated."""
    exit_code = 2


class ResourceRefusal(QuenchError):
    """Raised when a long run is requested without acknowledgement."""
    exit_code = 3


class SchemaError(ValidationError):
    pass


class FingerprintMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SingleClassDataset(ValidationError):
    pass


class ConventionMismatch(NumericalError):
    pass


class EigensolverFailure(NumericalError):
    pass


class StepSizeTooCoarse(NumericalError):
    pass


class PositivityViolation(NumericalError):
    pass


class DegenerateGroundState(NumericalError):
    pass


class PsdViolation(NumericalError):
    pass


class InvariantViolation(NumericalError):
    """An operator or matrix failed a structural check (Hermiticity, norm, ...)."""
    pass


class NonConvergence(UserWarning):
    """SMO stopped at its iteration cap; the best iterate was returned."""
    pass


class NearDegeneracy(UserWarning):
    """A ground state was picked by tie-break inside a degenerate eigenspace."""
    pass


class InvariantValidator:
    """Tolerance checks applied before values flow downstream."""

    @staticmethod
    def check_hermitian(matrix: np.ndarray, tol: float = 1e-12) -> None:
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatch(f"Expected a square matrix, got shape {matrix.shape}")
        dev = float(np.max(np.abs(matrix - matrix.conj().T))) if matrix.size else 0.0
        if dev > tol:
            raise InvariantViolation(f"hermiticity: max |A - A^dagger| = {dev:.3e} > {tol:.0e}")

    @staticmethod
    def check_normalized(vector: np.ndarray, tol: float = 1e-10) -> None:
        if vector.ndim != 1:
            raise DimensionMismatch(f"Expected a state vector, got shape {vector.shape}")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > tol:
            raise InvariantViolation(f"normalization: |psi| = {norm:.12f}")

    @staticmethod
    def check_density(
        matrix: np.ndarray,
        herm_tol: float = 1e-8,
        trace_tol: float = 1e-6,
        psd_tol: float = 1e-6,
    ) -> float:
        """
        Validate a density operator.

        Returns:
            The minimum eigenvalue, for callers that track positivity drift.

        Raises:
            InvariantViolation: Hermiticity or trace out of tolerance
            PositivityViolation: Minimum eigenvalue below -psd_tol
        """
        InvariantValidator.check_hermitian(matrix, tol=herm_tol)
        trace = complex(np.trace(matrix))
        if abs(trace - 1.0) > trace_tol:
            raise InvariantViolation(f"trace: Tr(rho) = {trace.real:.9f}{trace.imag:+.2e}j")
        min_eig = float(np.linalg.eigvalsh(0.5 * (matrix + matrix.conj().T))[0])
        if min_eig < -psd_tol:
            raise PositivityViolation(f"positivity: min eigenvalue {min_eig:.3e} < {-psd_tol:.0e}")
        return min_eig

    @staticmethod
    def clamp_unit(values, tol: float, what: str) -> np.ndarray:
        """Clamp values into [0, 1] after asserting the excursion is below tol."""
        arr = np.asarray(values, dtype=float)
        if arr.size:
            excursion = max(float(-arr.min()), float(arr.max() - 1.0), 0.0)
            if excursion > tol:
                raise InvariantViolation(f"{what}: excursion {excursion:.3e} outside [0, 1]")
        return np.clip(arr, 0.0, 1.0)

    @staticmethod
    def real_part(values, tol: float, what: str) -> np.ndarray:
        """Drop an imaginary residue after asserting it is below tol."""
        arr = np.asarray(values)
        if np.iscomplexobj(arr) and arr.size:
            residue = float(np.max(np.abs(arr.imag)))
            if residue > tol:
                raise InvariantViolation(f"{what}: imaginary residue {residue:.3e}")
            return arr.real.copy()
        return arr.astype(float)

    @staticmethod
    def check_gram(values: np.ndarray, min_eigenvalue: float, psd_tol: float = 1e-6) -> list[str]:
        """
        Validate a mapped Gram matrix.

        Returns:
            List of non-fatal issues (range excursions within rounding).

        Raises:
            PsdViolation: Minimum eigenvalue below -psd_tol
            InvariantViolation: Asymmetry or non-unit diagonal
        """
        issues = []
        if not np.array_equal(values, values.T):
            raise InvariantViolation("gram: matrix is not exactly symmetric")
        if not np.all(np.diag(values) == 1.0):
            raise InvariantViolation("gram: diagonal is not exactly 1")
        lo, hi = float(values.min()), float(values.max())
        if lo < -1e-10 or hi > 1.0 + 1e-10:
            issues.append(f"gram: entries span [{lo:.3e}, {hi:.3e}]")
        if min_eigenvalue < -psd_tol:
            raise PsdViolation(f"gram: min eigenvalue {min_eigenvalue:.3e} < {-psd_tol:.0e}")
        if min_eigenvalue < -1e-8:
            issues.append(f"gram: min eigenvalue {min_eigenvalue:.3e} below -1e-8")
        return issues
