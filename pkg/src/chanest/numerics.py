"""Small dense complex linear-algebra kernel.

Matrices are plain complex128 ndarrays. ``compact_svd`` and ``svd_values``
accept stacks of matrices (shape ``(..., m, n)``) so that the solver can
threshold all blocks of a block matrix in one call.
"""
from typing import NamedTuple

import numpy as np

from .constants import HERMITIAN_TOL

# relative tolerance used to detect ties in the phase convention
_PHASE_TIE_RTOL = 1e-8


class SvdFactors(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _check_finite(A):
    A = np.asarray(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("input contains NaN or Inf")
    return A


def _phase_normalize(U, V):
    # make the largest-magnitude entry of each left singular vector real
    # positive; ties go to the smallest row index
    mag = np.abs(U)
    peak = mag.max(axis=-2, keepdims=True)
    is_peak = mag >= peak * (1.0 - _PHASE_TIE_RTOL)
    idx = np.argmax(is_peak, axis=-2)[..., None, :]
    pivot = np.take_along_axis(U, idx, axis=-2)
    pmag = np.abs(pivot)
    phase = np.where(pmag > 0, pivot / np.where(pmag > 0, pmag, 1.0), 1.0)
    return U * phase.conj(), V * phase.conj()


def compact_svd(A) -> SvdFactors:
    """Compact SVD ``A = U @ diag(S) @ V^H`` with ``r = min(m, n)`` factors.

    Singular values are non-increasing and each left singular vector is
    rotated so its largest-magnitude entry is real and positive, which makes
    the factors reproducible. Works on stacks of matrices.
    """
    A = _check_finite(A).astype(complex)
    if A.ndim < 2 or min(A.shape[-2:]) < 1:
        raise ValueError(f"expected a non-empty matrix, got shape {A.shape}")
    U, S, Vh = np.linalg.svd(A, full_matrices=False)
    V = np.conj(np.swapaxes(Vh, -1, -2))
    U, V = _phase_normalize(U, V)
    return SvdFactors(U, S, V)


def svd_values(A):
    """Singular values only (non-increasing), stack-aware."""
    return np.linalg.svd(_check_finite(A), compute_uv=False)


def nuclear_norm(A):
    return svd_values(A).sum(axis=-1)


def spectral_norm(A):
    return svd_values(A)[..., 0]


def frobenius_norm(A):
    return float(np.linalg.norm(np.asarray(A)))


def hermitian_eig(A):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns.
    """
    A = _check_finite(A).astype(complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(np.linalg.norm(A), 1.0)
    if np.linalg.norm(A - A.conj().T) > HERMITIAN_TOL * scale:
        raise ValueError("matrix is not Hermitian")
    w, V = np.linalg.eigh(0.5 * (A + A.conj().T))
    return w[::-1], V[:, ::-1]


def make_rng(seed) -> np.random.Generator:
    """Seeded generator (numpy PCG64). ``seed`` may be an int or SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_complex_gaussian(rng, rows, cols, variance):
    """Circular complex Gaussian matrix with per-entry variance ``variance``.

    Real and imaginary parts are independent with variance ``variance / 2``.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    std = np.sqrt(variance / 2.0)
    z = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    return std * z


def khatri_rao(B, A):
    """Columnwise Kronecker product; column p is ``kron(B[:, p], A[:, p])``."""
    B = np.asarray(B)
    A = np.asarray(A)
    if B.shape[1] != A.shape[1]:
        raise ValueError("Khatri-Rao factors need equal column counts")
    return (B[:, None, :] * A[None, :, :]).reshape(-1, B.shape[1])
