"""Dense symmetric-positive-definite helpers used by the recursions.

Every matrix produced by the design recursions is symmetric positive
definite in exact arithmetic; these helpers keep that true numerically by
symmetrizing after each operation and by routing every inversion through a
Cholesky factorization, which doubles as the definiteness check.
"""

from __future__ import annotations

import numpy as np


def symmetrize(x: np.ndarray) -> np.ndarray:
    """Return (x + x.T) / 2."""
    return 0.5 * (x + x.T)


def spd_inverse(x: np.ndarray) -> np.ndarray:
    """Invert a symmetric positive definite matrix via Cholesky.

    Raises
    ------
    numpy.linalg.LinAlgError
        If ``x`` is not positive definite to working precision.
    """
    ell = np.linalg.cholesky(symmetrize(x))
    ell_inv = np.linalg.solve(ell, np.eye(x.shape[0]))
    return symmetrize(ell_inv.T @ ell_inv)

def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a @ x = b for symmetric positive definite ``a``."""
    ell = np.linalg.cholesky(symmetrize(a))
    y = np.linalg.solve(ell, b)
    return np.linalg.solve(ell.T, y)


def woodbury_downdate(p: np.ndarray, b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Return (p^-1 + b r^-1 b^T)^-1 without forming p^-1.

    Uses the low-rank update identity
    ``p - p b (r + b^T p b)^-1 b^T p``, which only inverts an m-by-m
    matrix; preferable whenever b has fewer columns than rows.
    """
    core = symmetrize(r + b.T @ p @ b)
    return symmetrize(p - p @ b @ spd_solve(core, b.T @ p))


def is_spd(x: np.ndarray, rel_tol: float = 1e-10) -> bool:
    """Check symmetry plus positive definiteness via eigenvalues.

    Positive definiteness is judged as lambda_min > rel_tol * lambda_max,
    which tolerates round-off in user-provided matrices.
    """
    if x.shape[0] != x.shape[1]:
        return False
    if not np.allclose(x, x.T, rtol=1e-10, atol=1e-12):
        return False
    eigs = np.linalg.eigvalsh(symmetrize(x))
    return bool(eigs[0] > rel_tol * max(eigs[-1], 0.0))


def eig_range(x: np.ndarray) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    eigs = np.linalg.eigvalsh(symmetrize(x))
    return float(eigs[0]), float(eigs[-1])


def spectral_norm(x: np.ndarray) -> float:
    """2-norm (largest singular value)."""
    return float(np.linalg.norm(x, 2))


def reciprocal_condition(x: np.ndarray) -> float:
    """sigma_min / sigma_max; zero for an exactly singular matrix."""
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[0] == 0.0:
        return 0.0
    return float(sv[-1] / sv[0])


def block_diag(blocks: list[np.ndarray]) -> np.ndarray:
    """Stack square blocks along the diagonal."""
    total = sum(b.shape[0] for b in blocks)
    out = np.zeros((total, total))
    at = 0
    for b in blocks:
        m = b.shape[0]
        out[at:at + m, at:at + m] = b
        at += m
    return out
