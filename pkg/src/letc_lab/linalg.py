"""Small dense linear algebra for symmetric systems.

Thin, validated wrappers around LAPACK (through numpy and scipy) for the
matrices this package works with: Gram matrices of augmented designs and
second-moment matrices of dimension 2d, rarely more than a few hundred.
"""

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionMismatch, LinalgError, NonFiniteInput, SingularSystem

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

SYMMETRY_TOL: float = 1e-9
CLAMP_TOL: float = 1e-9
JITTER_SCALE: float = 1e-12
JITTER_STEPS: int = 3
PIVOT_RATIO_MIN: float = 1e-12
JITTERED_RESIDUAL_TOL: float = 1e-6


@dataclass(frozen=True)
class SymmetricEigen:
    """Eigendecomposition ``A = V diag(w) V^T`` with ``w`` sorted non-increasing."""

    eigenvalues: Vector
    eigenvectors: Matrix

    @property
    def dim(self) -> int:
        return int(self.eigenvalues.shape[0])

    def reconstruct(self) -> Matrix:
        """Rebuild the decomposed matrix."""
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


@dataclass(frozen=True)
class SpdSolution:
    """Solution of a positive semi-definite system and the jitter it needed."""

    x: Vector
    jitter: float = 0.0

    @property
    def jittered(self) -> bool:
        return self.jitter > 0.0


def as_matrix(A: ArrayLike, name: str = "A") -> Matrix:
    """Convert to a finite square float matrix or raise."""
    M = np.asarray(A, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    return M


def as_vector(b: ArrayLike, dim: int | None = None, name: str = "b") -> Vector:
    """Convert to a finite float vector, optionally of a given length."""
    v = np.asarray(b, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput(f"{name} has non-finite entries")
    return v


def symmetric_eigen(A: ArrayLike) -> SymmetricEigen:
    r"""
    Eigendecomposition of a real symmetric matrix.

    The input is symmetrized as :math:`(A + A^T)/2` before calling LAPACK's
    ``syevd`` through :func:`numpy.linalg.eigh`, so tiny asymmetries from
    floating-point accumulation are harmless.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Symmetric matrix. ``max|A - A^T|`` must not exceed
        ``1e-9 * max|A|``.

    Returns
    -------
    SymmetricEigen
        Eigenvalues sorted non-increasing and orthonormal eigenvector
        columns in matching order.

    Raises
    ------
    DimensionMismatch
        If ``A`` is not square.
    NonFiniteInput
        If ``A`` contains NaN or infinite entries.
    LinalgError
        If ``A`` is clearly not symmetric.
    """
    M = as_matrix(A)
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    asymmetry = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asymmetry > SYMMETRY_TOL * max(scale, np.finfo(float).tiny):
        raise LinalgError(f"matrix is not symmetric (max asymmetry {asymmetry:.3e})")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return SymmetricEigen(eigenvalues=w[::-1].copy(), eigenvectors=V[:, ::-1].copy())


def clamp_eigenvalues(eigenvalues: Vector, rel_tol: float = CLAMP_TOL) -> Vector:
    """Zero out small negative eigenvalues of a PSD matrix.

    Values below ``-rel_tol * lambda_max`` mean the matrix is not PSD and
    raise :class:`LinalgError`.
    """
    w = np.asarray(eigenvalues, dtype=np.float64)
    if w.size == 0:
        return w.copy()
    top = max(float(np.max(w)), 0.0)
    if np.any(w < -rel_tol * top):
        raise LinalgError(
            f"matrix is not positive semi-definite (min eigenvalue {float(np.min(w)):.3e})"
        )
    return np.maximum(w, 0.0)


def trace_inverse(eig: SymmetricEigen, floor: float = 0.0, *, rank_tol: float = 0.0) -> float:
    """Return ``sum_k 1 / max(lambda_k, floor)``.

    Eigenvalues at or below ``rank_tol * lambda_max`` count as exact zeros.
    A zero that the floor does not lift gives ``math.inf``.
    """
    if floor < 0.0:
        raise ValueError(f"floor must be non-negative, got {floor}")
    w = clamp_eigenvalues(eig.eigenvalues)
    if rank_tol > 0.0 and w.size:
        w = np.where(w <= rank_tol * w[0], 0.0, w)
    denominators = np.maximum(w, floor)
    if np.any(denominators <= 0.0):
        return math.inf
    return float(np.sum(1.0 / denominators))


def _pivot_ratio(factor: Matrix) -> float:
    diag = np.abs(np.diag(factor))
    if diag.size == 0 or diag.max() == 0.0:
        return 0.0
    return float((diag.min() / diag.max()) ** 2)


def solve_spd(A: ArrayLike, b: ArrayLike) -> SpdSolution:
    r"""
    Solve :math:`Ax = b` for symmetric positive semi-definite :math:`A`.

    A plain Cholesky solve is tried first. If the factorization fails, or
    its pivots reveal numerical singularity, diagonal jitter
    :math:`\epsilon = 10^{-12}\,\mathrm{tr}(A)/n` is added and escalated by
    a factor of ten up to three times. A jittered solution is only accepted
    when it still solves the *original* system to ``1e-6`` relative
    residual, so inconsistent singular systems are rejected rather than
    answered with a huge vector.

    Parameters
    ----------
    A : array_like, shape (n, n)
        Symmetric PSD matrix.
    b : array_like, shape (n,)
        Right-hand side.

    Returns
    -------
    SpdSolution
        The solution and the jitter that was added (0.0 if none).

    Raises
    ------
    SingularSystem
        If no jitter level yields an acceptable solution.
    """
    M = as_matrix(A)
    n = M.shape[0]
    rhs = as_vector(b, n)
    M = 0.5 * (M + M.T)
    frob = float(np.linalg.norm(M))
    b_norm = float(np.linalg.norm(rhs))

    trace = float(np.trace(M))
    base = JITTER_SCALE * (trace / n if trace > 0.0 else 1.0)
    levels = [0.0] + [base * 10.0**k for k in range(JITTER_STEPS + 1)]

    for jitter in levels:
        try:
            factor, lower = cho_factor(M + jitter * np.eye(n), lower=True, check_finite=False)
        except LinAlgError:
            continue
        if jitter == 0.0 and _pivot_ratio(factor) < PIVOT_RATIO_MIN:
            continue
        x = cho_solve((factor, lower), rhs, check_finite=False)
        if not np.all(np.isfinite(x)):
            continue
        residual = float(np.linalg.norm(M @ x - rhs))
        if jitter == 0.0:
            if residual <= 1e-8 * (frob * float(np.linalg.norm(x)) + b_norm):
                return SpdSolution(x=x, jitter=0.0)
        elif residual <= JITTERED_RESIDUAL_TOL * max(b_norm, np.finfo(float).tiny):
            return SpdSolution(x=x, jitter=jitter)

    raise SingularSystem(
        f"system of dimension {n} is singular beyond jitter {levels[-1]:.3e}",
        jitter=levels[-1],
    )


def outer_accumulate(acc: ArrayLike, z: ArrayLike, weight: float = 1.0) -> Matrix:
    """Return ``acc + weight * z z^T``."""
    M = as_matrix(acc, name="acc")
    v = as_vector(z, M.shape[0], name="z")
    return M + weight * np.outer(v, v)
