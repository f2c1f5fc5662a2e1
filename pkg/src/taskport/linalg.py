"""Dense float64 linear algebra: deterministic SVD, pseudo-inverse, ridge solve,
seeded orthonormal sampling.

All functions take and return plain 2-D ``numpy.float64`` arrays (C order) and
never modify their inputs. Entries must be finite; NaN/Inf anywhere is an error,
not a silent propagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, NonFiniteError

__all__ = [
    "DEFAULT_RCOND",
    "SvdResult",
    "as_matrix",
    "require_finite",
    "svd",
    "pseudo_inverse",
    "tikhonov_solve",
    "random_orthonormal_rows",
]

# Relative singular-value cutoff used when no explicit rcond is given.
DEFAULT_RCOND = 1e-10


def require_finite(a, name="array"):
    """Raise NonFiniteError if ``a`` contains NaN or Inf entries."""
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return a


def as_matrix(a, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {out.ndim}-D with shape {out.shape}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and one column, got shape {out.shape}")
    require_finite(out, name)
    return out


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ vt`` with k = min(m, n).

    ``u`` is (m, k), ``sigma`` is length k, non-negative and non-increasing,
    ``vt`` is (k, n). Signs are normalized so the largest-magnitude entry of
    every column of ``u`` is positive, with the matching row of ``vt`` flipped
    alongside; repeated calls on the same input produce identical bytes.
    """

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def svd(a) -> SvdResult:
    """Deterministic thin SVD of a real matrix."""
    a = as_matrix(a, "svd input")
    m, n = a.shape
    try:
        u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD failed to converge on a {m}x{n} matrix: {exc}") from exc
    # Sign convention: per column of u, force the largest-|entry| positive.
    anchor = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[anchor, np.arange(u.shape[1])])
    signs[signs == 0.0] = 1.0
    return SvdResult(u=u * signs, sigma=sigma, vt=vt * signs[:, None])


def pseudo_inverse(a, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD truncation.

    Singular values below ``rcond * sigma_max`` are treated as zero. ``rcond=0``
    keeps every strictly positive singular value.
    """
    if rcond < 0:
        raise ValueError(f"rcond must be non-negative, got {rcond}")
    res = svd(a)
    cutoff = rcond * (res.sigma[0] if res.sigma.size else 0.0)
    keep = (res.sigma > 0.0) & (res.sigma >= cutoff)
    inv = np.zeros_like(res.sigma)
    inv[keep] = 1.0 / res.sigma[keep]
    return (res.vt.T * inv) @ res.u.T


def tikhonov_solve(gram, rhs, lam: float) -> np.ndarray:
    """Solve ``(gram + lam * I) x = rhs`` for symmetric PSD ``gram`` and ``lam > 0``.

    Uses a Cholesky factorization of the shifted matrix, so an indefinite input
    fails loudly instead of returning garbage. ``rhs`` may be a vector or a
    matrix of stacked right-hand sides; the output has the same shape.
    """
    gram = as_matrix(gram, "gram")
    n = gram.shape[0]
    if gram.shape[1] != n:
        raise DimensionError(f"gram must be square, got shape {gram.shape}")
    if not np.allclose(gram, gram.T, rtol=1e-10, atol=1e-12 * max(1.0, float(np.abs(gram).max()))):
        raise ValueError("gram must be symmetric")
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    rhs = np.asarray(rhs, dtype=np.float64)
    require_finite(rhs, "rhs")
    if rhs.shape[0] != n:
        raise DimensionError(f"rhs has {rhs.shape[0]} rows, expected {n}")
    shifted = gram + lam * np.eye(n)
    try:
        chol = np.linalg.cholesky(shifted)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"gram + lam*I is not positive definite (lam={lam}): {exc}") from exc
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def random_orthonormal_rows(d_small: int, d_large: int, seed) -> np.ndarray:
    """Seeded (d_small, d_large) matrix ``t`` with ``t @ t.T = I`` to 1e-12.

    Built from the QR factorization of a Gaussian draw with the usual sign fix
    (diagonal of R forced positive), so a fixed seed gives a fixed matrix.
    """
    if d_small < 1 or d_large < 1:
        raise DimensionError(f"dimensions must be positive, got ({d_small}, {d_large})")
    if d_small > d_large:
        raise DimensionError(
            f"orthonormal rows need d_small <= d_large, got ({d_small}, {d_large})"
        )
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((d_large, d_small))
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return np.ascontiguousarray((q * signs).T)
