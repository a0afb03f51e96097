"""Orthonormal-basis primitives: QR, top-k eigenvectors, subspace distance.

Bases are plain ``(d, k)`` float arrays with orthonormal columns; use
:func:`check_orthonormal` where the invariant matters.
"""

from __future__ import annotations

import warnings

import numpy as np

ORTHO_TOL = 1e-10


class RankDeficient(ValueError):
    """Matrix does not have full column rank."""


class DimensionMismatch(ValueError):
    pass


class DegenerateGapWarning(UserWarning):
    """The k-th and (k+1)-th eigenvalues (nearly) coincide; the span is not unique."""


def check_orthonormal(U: np.ndarray, tol: float = ORTHO_TOL) -> None:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[1] > U.shape[0]:
        raise DimensionMismatch(f"expected a tall (d, k) matrix, got shape {U.shape}")
    dev = np.linalg.norm(U.T @ U - np.eye(U.shape[1]))
    if dev > tol:
        raise ValueError(f"columns are not orthonormal (||U^T U - I||_F = {dev:.3e})")


def qr_orthonormalize(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR with a nonnegative diagonal on the triangular factor.

    Returns ``(Q, P)`` with ``Q @ P == M``, ``Q`` having orthonormal columns
    and ``P`` upper triangular. The sign convention makes the factorization
    unique.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``M`` is at most ``1e-12`` times
        the largest (this includes the all-zero matrix).
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] > M.shape[0]:
        raise DimensionMismatch(f"expected a tall (d, k) matrix, got shape {M.shape}")
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0 or s[-1] <= 1e-12 * s[0]:
        raise RankDeficient(f"matrix of shape {M.shape} is not of full column rank")
    Q, P = np.linalg.qr(M, mode="reduced")
    signs = np.where(np.diag(P) < 0.0, -1.0, 1.0)
    Q = Q * signs
    P = np.triu(P * signs[:, None])
    return Q, P


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def top_k_eigvecs(Z: np.ndarray, k: int) -> np.ndarray:
    """Eigenvectors of the ``k`` algebraically largest eigenvalues of symmetric ``Z``.

    Columns are ordered by decreasing eigenvalue. Emits
    :class:`DegenerateGapWarning` when the k-th eigengap is below 1e-12.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] != Z.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {Z.shape}")
    d = Z.shape[0]
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    scale = max(1.0, float(np.max(np.abs(Z)))) if Z.size else 1.0
    if np.max(np.abs(Z - Z.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (Z + Z.T))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    if k < d and w[k - 1] - w[k] < 1e-12:
        warnings.warn(
            f"eigengap lambda_{k} - lambda_{k + 1} = {w[k - 1] - w[k]:.3e}; span not unique",
            DegenerateGapWarning,
            stacklevel=2,
        )
    return _fix_signs(V[:, :k].copy())


def spectral_norm(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.svd(M, compute_uv=False)[0])


def principal_dist(A: np.ndarray, B: np.ndarray) -> float:
    """Principal-angle distance ``||(I - A A^T) B||_2`` between two column spans.

    Both arguments must be orthonormal bases of the same rank in the same
    ambient space. The result is 0 for identical spans and 1 when ``B``
    contains a direction orthogonal to ``span(A)``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape != B.shape:
        raise DimensionMismatch(f"bases have shapes {A.shape} and {B.shape}")
    resid = B - A @ (A.T @ B)
    return float(min(1.0, max(0.0, spectral_norm(resid))))
