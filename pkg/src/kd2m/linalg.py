"""Dense symmetric linear algebra for the Gaussian metrics.

Symmetric matrices are plain ``float64`` ndarrays; every entry point
symmetrizes its input as ``(M + M.T) / 2`` first.
"""

import numpy as np

from .errors import ConditioningError, InputError, NotPSDError, ShapeError

PSD_TOL = 1e-8
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


def symmetrize(M) -> np.ndarray:
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError("matrix has non-finite entries")
    return 0.5 * (M + M.T)


def sym_eig(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ``w`` in descending order and the
    matching orthonormal eigenvectors as the columns of ``V``, so that
    ``M = V @ diag(w) @ V.T``.
    """
    A = symmetrize(M)
    d = A.shape[0]
    V = np.eye(d)
    scale = np.linalg.norm(A)
    if scale > 0.0:
        for _ in range(JACOBI_MAX_SWEEPS):
            off = np.linalg.norm(A - np.diag(np.diag(A)))
            if off < JACOBI_TOL * scale:
                break
            for p in range(d - 1):
                for q in range(p + 1, d):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if abs(theta) > 1e150:
                        t = 0.5 / theta  # theta^2 would overflow
                    else:
                        t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    # A <- J^T A J with J the (p, q) plane rotation
                    ap, aq = A[:, p].copy(), A[:, q].copy()
                    A[:, p] = c * ap - s * aq
                    A[:, q] = s * ap + c * aq
                    ap, aq = A[p, :].copy(), A[q, :].copy()
                    A[p, :] = c * ap - s * aq
                    A[q, :] = s * ap + c * aq
                    A[p, q] = A[q, p] = 0.0
                    vp, vq = V[:, p].copy(), V[:, q].copy()
                    V[:, p] = c * vp - s * vq
                    V[:, q] = s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def _psd_eig(M) -> tuple[np.ndarray, np.ndarray, float]:
    w, V = sym_eig(M)
    wmin = float(w.min())
    if wmin < -PSD_TOL:
        raise NotPSDError(wmin)
    clamp = float(-wmin) if wmin < 0.0 else 0.0
    return np.clip(w, 0.0, None), V, clamp


def sqrtm_psd(M, return_clamp: bool = False):
    """Principal square root of a PSD matrix.

    Eigenvalues in ``[-1e-8, 0)`` are treated as round-off and clamped to
    zero; with ``return_clamp`` the clamp magnitude is returned alongside.
    """
    w, V, clamp = _psd_eig(M)
    S = (V * np.sqrt(w)) @ V.T
    S = 0.5 * (S + S.T)
    return (S, clamp) if return_clamp else S


def logdet_inv_psd(M, max_cond: float = 1e14) -> tuple[float, np.ndarray]:
    """``(log det M, M^-1)`` for a well-conditioned positive definite matrix."""
    w, V, _ = _psd_eig(M)
    if w[-1] <= 0.0 or w[0] / w[-1] > max_cond:
        raise ConditioningError(f"matrix is numerically singular (eigenvalues {w[0]:.3e} .. {w[-1]:.3e})")
    return float(np.sum(np.log(w))), (V / w) @ V.T


def bures(A, B) -> float:
    """Bures discrepancy ``Tr A + Tr B - 2 Tr sqrt(sqrt(A) B sqrt(A))``."""
    A = symmetrize(A)
    B = symmetrize(B)
    if A.shape != B.shape:
        raise ShapeError(f"dimension mismatch: {A.shape} vs {B.shape}")
    if np.array_equal(A, B):
        _psd_eig(A)
        return 0.0
    sA = sqrtm_psd(A)
    w, _, _ = _psd_eig(sA @ B @ sA)
    tr_a, tr_b = float(np.trace(A)), float(np.trace(B))
    value = tr_a + tr_b - 2.0 * float(np.sum(np.sqrt(w)))
    # cancellation noise is of order eps * (Tr A + Tr B)
    if value < 64 * np.finfo(float).eps * (abs(tr_a) + abs(tr_b)):
        return 0.0
    return value
