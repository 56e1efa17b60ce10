"""Small symmetric-matrix helpers used throughout the filter recursions.

All covariance-like matrices are kept symmetric by construction: every
assembly ends with an explicit (M + M^T)/2, and definiteness tests use
symmetric eigensolvers so asymmetry drift never leaks into comparisons.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError

# Relative jitter added once on a failed Cholesky factorization before
# giving up; long horizons accumulate rounding asymmetry.
_JITTER_SCALE = 1e-10


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def min_eig(m: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetrized matrix."""
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def max_eig(m: np.ndarray) -> float:
    """Largest eigenvalue of the symmetrized matrix."""
    return float(np.linalg.eigvalsh(symmetrize(m))[-1])


def is_spd(m: np.ndarray, tol: float = 1e-9) -> bool:
    return min_eig(m) > tol


def _cho_with_jitter(m: np.ndarray, context: str):
    try:
        return cho_factor(m, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = _JITTER_SCALE * np.trace(m) / m.shape[0]
    try:
        return cho_factor(m + jitter * np.eye(m.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"matrix not positive definite ({context})"
        ) from exc


def spd_inverse(m: np.ndarray, context: str = "spd_inverse") -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky.

    On a failed factorization, one jitter retry is attempted before
    raising :class:`NumericalError` with the caller's context string.
    """
    m = symmetrize(np.asarray(m, dtype=float))
    c = _cho_with_jitter(m, context)
    return symmetrize(cho_solve(c, np.eye(m.shape[0])))


def spd_solve(m: np.ndarray, b: np.ndarray, context: str = "spd_solve") -> np.ndarray:
    """Solve m @ x = b for symmetric positive-definite m."""
    m = symmetrize(np.asarray(m, dtype=float))
    c = _cho_with_jitter(m, context)
    return cho_solve(c, b)
