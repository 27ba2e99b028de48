"""Dense real linear algebra shared by the rest of the package.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  The
routines here add the validation and tolerance conventions the other
modules rely on (symmetrisation before symmetric eigensolves, hybrid
absolute/relative thresholds scaled by the input norm, ordered spectra).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

__all__ = [
    "LinAlgFailure",
    "SingularMatrixError",
    "as_matrix",
    "kron",
    "symmetrize",
    "eig_symmetric",
    "eig_general",
    "is_positive_definite",
    "solve_linear",
    "spectral_radius",
    "spectral_abscissa",
]

SYMMETRY_RTOL = 1e-10
COND_LIMIT = 1e12


class LinAlgFailure(ArithmeticError):
    """A numerical routine failed to converge on otherwise valid input."""


class SingularMatrixError(ValueError):
    """Raised when a linear system is singular or too ill-conditioned."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce ``value`` to a finite 2-D float array.

    Scalars become 1x1 matrices and 1-D sequences become row vectors.
    """
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, ord="fro"))


def kron(a, b) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``a[i, j] * b``."""
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def symmetrize(s: np.ndarray) -> np.ndarray:
    return 0.5 * (s + s.T)


def _require_symmetric(s: np.ndarray) -> np.ndarray:
    s = as_matrix(s, "s")
    if s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    scale = max(_norm(s), 1.0)
    asym = float(np.max(np.abs(s - s.T)))
    if asym > SYMMETRY_RTOL * scale:
        raise ValueError(f"matrix is not symmetric (max |s - s^T| = {asym:.3e})")
    return symmetrize(s)


def eig_symmetric(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix.

    Returns
    -------
    values : ndarray
        Real eigenvalues in ascending order.
    vectors : ndarray
        Orthonormal eigenvectors stored column-wise.
    """
    s = _require_symmetric(s)
    try:
        values, vectors = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        raise LinAlgFailure(f"symmetric eigensolver did not converge: {exc}") from exc
    return values, vectors


def eig_general(m) -> np.ndarray:
    """Eigenvalues of a general square matrix, sorted by real part then imaginary part."""
    m = as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    try:
        values = sla.eigvals(m, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinAlgFailure(f"QR iteration did not converge: {exc}") from exc
    values = np.asarray(values, dtype=complex)
    # Exactly real input: snap tiny imaginary parts so conjugate pairs sort together.
    imag_floor = 1e-14 * max(_norm(m), 1.0)
    values.imag[np.abs(values.imag) < imag_floor] = 0.0
    order = np.lexsort((values.imag, values.real))
    return values[order]


def is_positive_definite(s, margin: float = 0.0) -> bool:
    """True iff the smallest eigenvalue of symmetric ``s`` exceeds ``margin``."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    s = _require_symmetric(s)
    shifted = s - margin * np.eye(s.shape[0])
    try:
        np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError:
        return False
    # Cholesky can succeed on numerically semidefinite input; confirm the sign.
    return bool(np.linalg.eigvalsh(shifted)[0] > 0.0)


def solve_linear(a, rhs) -> np.ndarray:
    """Solve ``a @ x = rhs`` for square nonsingular ``a``.

    Raises
    ------
    SingularMatrixError
        If the 2-norm condition estimate of ``a`` exceeds 1e12.
    """
    a = as_matrix(a, "a")
    rhs_arr = np.array(rhs, dtype=float)
    vector_rhs = rhs_arr.ndim == 1
    rhs_m = rhs_arr.reshape(-1, 1) if vector_rhs else as_matrix(rhs_arr, "rhs")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"coefficient matrix must be square, got {a.shape}")
    if rhs_m.shape[0] != a.shape[0]:
        raise ValueError(f"rhs has {rhs_m.shape[0]} rows, expected {a.shape[0]}")
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMatrixError(f"matrix is singular or ill-conditioned (cond={cond:.3e})", cond)
    x = np.linalg.solve(a, rhs_m)
    return x.ravel() if vector_rhs else x


def spectral_radius(m) -> float:
    return float(np.max(np.abs(eig_general(m))))


def spectral_abscissa(m) -> float:
    return float(np.max(eig_general(m).real))
